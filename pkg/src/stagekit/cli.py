"""Command line interface.

Subcommands cover the four pipeline stages plus standalone file validation:

- ``evaluate``: score a prediction file against ground truth
- ``ensemble``: fuse several prediction files into one
- ``swa-average``: average weight archives elementwise
- ``pipeline``: run the full gated two-stage flow from a config file
- ``validate``: check that a file conforms to its format, nothing else

Exit codes: 0 success, 1 validation failure (the inputs are well-formed
files but violate a contract), 2 unreadable or unparseable input, 3
internal error. Identical invocations over identical files produce
byte-identical outputs. Nothing is partially written: every command
computes its full result before the first output file appears.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .core import (
    ParseError,
    StagekitError,
    ValidationError,
    atomic_write_bytes,
    atomic_write_text,
    detection_set_to_json,
    load_detection_set,
    load_ground_truth,
    load_json_file,
    validate_ground_truth,
    validate_predictions,
)
from .ensemble import MERGE_MODES, STRATEGIES, EnsembleConfig, ensemble
from .metrics import load_labels, validate_labels_file
from .pipeline import parse_config, run_pipeline
from .report import build_eval_report, report_to_text, write_report_files
from .swa import average_archives, read_archive, write_archive
from .tta import load_classification_outputs, validate_classification_file

log = logging.getLogger("stagekit")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARSE = 2
EXIT_INTERNAL = 3


def _configure_logging() -> None:
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    name = os.environ.get("STAGEKIT_LOG", "warn").lower()
    logging.basicConfig(level=levels.get(name, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagekit",
        description="gated two-stage detection pipeline tools",
    )
    parser.add_argument("--version", action="version", version=f"stagekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--gt", required=True, help="ground truth file")
    p.add_argument("--pred", required=True, help="prediction file")
    p.add_argument("--mask", action="store_true", help="also score masks")
    p.add_argument("--cls-pred", help="classification output file")
    p.add_argument("--cls-labels", help="classification label file")
    p.add_argument("--max-dets", type=_positive_int, default=100, help="per-image detection budget (default 100)")
    p.add_argument("--out", help="directory for report files; omit to print the text report")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads (output is independent of this)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="fuse prediction files from several models")
    p.add_argument("preds", nargs="+", help="prediction files, one per model")
    p.add_argument("--out", required=True, help="output prediction file")
    p.add_argument("--strategy", choices=STRATEGIES, default="affirmative")
    p.add_argument("--cluster-iou", type=float, default=0.5, help="overlap needed to join a cluster")
    p.add_argument("--merge", choices=MERGE_MODES, default="nms", help="how a kept cluster becomes detections")
    p.add_argument("--nms-iou", type=float, default=0.5, help="suppression threshold for --merge nms")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("swa-average", help="average weight archives elementwise")
    p.add_argument("archives", nargs="+", help="input archive files")
    p.add_argument("--out", required=True, help="output archive file")
    p.set_defaults(func=cmd_swa_average)

    p = sub.add_parser("pipeline", help="run the gated two-stage pipeline")
    p.add_argument("--config", required=True, help="pipeline config file")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--dry-run", action="store_true", help="validate and compute everything, write nothing")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads (output is independent of this)")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("validate", help="check a file against its format")
    p.add_argument("file", help="file to check")
    p.add_argument(
        "--kind",
        required=True,
        choices=["pred", "gt", "cls", "labels", "swa", "config"],
        help="which format the file claims to follow",
    )
    p.set_defaults(func=cmd_validate)

    return parser


def cmd_evaluate(args) -> int:
    if (args.cls_pred is None) != (args.cls_labels is None):
        raise ValidationError("--cls-pred and --cls-labels must be given together")
    preds = load_detection_set(args.pred)
    gt = load_ground_truth(args.gt)
    cls_outputs = None
    cls_labels = None
    class_names = None
    if args.cls_pred is not None:
        cls_outputs = load_classification_outputs(args.cls_pred)
        cls_labels, class_names = load_labels(args.cls_labels)
    report = build_eval_report(
        preds,
        gt,
        include_mask=args.mask,
        cls_outputs=cls_outputs,
        cls_labels=cls_labels,
        class_names=class_names,
        max_dets=args.max_dets,
        threads=args.threads,
    )
    if args.out is None:
        sys.stdout.write(report_to_text(report))
    else:
        for path in write_report_files(report, args.out, figures=not args.no_figures):
            log.info("wrote %s", path)
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = EnsembleConfig(
        strategy=args.strategy,
        cluster_iou=args.cluster_iou,
        merge_mode=args.merge,
        nms_iou=args.nms_iou,
    )
    sets = [load_detection_set(p) for p in args.preds]
    merged = ensemble(sets, cfg)
    atomic_write_text(
        Path(args.out), json.dumps(detection_set_to_json(merged), indent=2, sort_keys=True) + "\n"
    )
    log.info("wrote %s (%d detections)", args.out, len(merged.detections))
    return EXIT_OK


def cmd_swa_average(args) -> int:
    if len(args.archives) == 1:
        # averaging one archive is the identity, so the output is a verbatim
        # copy of the (validated) input
        path = Path(args.archives[0])
        read_archive(path)
        atomic_write_bytes(Path(args.out), path.read_bytes())
        return EXIT_OK
    archives = [read_archive(p) for p in args.archives]
    write_archive(average_archives(archives), Path(args.out))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = parse_config(args.config)
    if args.out_dir is None and not args.dry_run:
        raise ValidationError("pipeline needs --out-dir unless --dry-run is given")
    result = run_pipeline(cfg, out_dir=args.out_dir, dry_run=args.dry_run, threads=args.threads)
    if args.dry_run:
        sys.stdout.write(
            f"dry run ok: {result.manifest['counts']['gated_in']} of "
            f"{result.manifest['counts']['images']} images gated in, "
            f"{result.manifest['counts']['detections']} detections\n"
        )
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.kind == "swa":
        read_archive(args.file)
    elif args.kind == "config":
        parse_config(args.file)
    else:
        obj = load_json_file(args.file)
        checker = {
            "pred": validate_predictions,
            "gt": validate_ground_truth,
            "cls": validate_classification_file,
            "labels": validate_labels_file,
        }[args.kind]
        violations = checker(obj)
        if violations:
            raise ValidationError(f"{args.file}: invalid {args.kind} file", tuple(violations))
    sys.stdout.write(f"{args.file}: ok\n")
    return EXIT_OK


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc.detail()}\n")
        return EXIT_VALIDATION
    except ParseError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    except StagekitError as exc:
        sys.stderr.write(f"internal error: {exc}\n")
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - last resort
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
