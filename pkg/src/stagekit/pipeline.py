"""Two-stage orchestration: gate on classification, then ground and evaluate.

A single declarative config drives the run: per-view classification outputs
are aggregated and gated per image, grounding predictions from each source
model are inverse-mapped out of their augmented views and pooled, sources are
fused by the ensemble stage, and (optionally) the result is scored against
ground truth over every image, so images the gate filtered out still count
their annotations as misses.

Runs are deterministic: identical config and input files produce
byte-identical outputs, and the manifest records input digests plus every
tie-break rule in effect. All outputs are computed in memory first and then
written file-by-file via atomic rename, the manifest last, so a directory
containing `manifest.json` holds a complete run.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

from .core import (
    DetectionSet,
    ImageMeta,
    ValidationError,
    Violation,
    atomic_write_text,
    detection_set_to_json,
    image_id_key,
    load_detection_set,
    load_json_file,
)
from .ensemble import MERGE_MODES, STRATEGIES, EnsembleConfig, ensemble
from .metrics import load_labels
from .report import EvalReport, build_eval_report, write_report_files
from .tta import (
    ClassificationOutput,
    ViewTransform,
    aggregate_classification,
    load_classification_outputs,
    pool_views,
    transformed_frame,
)

__all__ = [
    "GateRule",
    "GateDecision",
    "ClassificationInput",
    "GroundingSource",
    "EvaluationConfig",
    "PipelineConfig",
    "parse_transform",
    "parse_config",
    "gate",
    "run_pipeline",
    "PipelineResult",
]

log = logging.getLogger("stagekit")

TIE_BREAK_RULES = (
    "detection order: score descending, then image id, category, box corners, source id, mask runs",
    "gate argmax: bleeding only when the bleeding-class probability is strictly greatest; ties stay non-bleeding",
    "view vote aggregation: per-view argmax ties go to the lower class index",
    "clustering: each detection joins the first existing cluster whose seed overlaps at IoU >= cluster_iou",
    "matching: a prediction takes the unmatched annotation with the highest IoU; equal IoU keeps the earliest annotation",
    "nms: a detection is kept only when its IoU with every kept detection is strictly below the threshold",
)


@dataclass(frozen=True)
class GateRule:
    rule: str
    threshold: float | None = None

    def __post_init__(self):
        if self.rule not in ("argmax", "threshold"):
            raise ValidationError(f"gate rule must be 'argmax' or 'threshold', got {self.rule!r}")
        if self.rule == "threshold":
            t = self.threshold
            if not isinstance(t, (int, float)) or isinstance(t, bool) or not 0.0 < t < 1.0:
                raise ValidationError(f"gate threshold must be in (0, 1), got {t!r}")
            object.__setattr__(self, "threshold", float(t))
        elif self.threshold is not None:
            raise ValidationError("argmax gate takes no threshold")


@dataclass(frozen=True)
class GateDecision:
    image_id: Any
    bleeding: bool
    probs: tuple[float, ...]


@dataclass(frozen=True)
class ClassificationInput:
    transform: ViewTransform
    path: Path


@dataclass(frozen=True)
class GroundingSource:
    source_id: str
    views: tuple[tuple[ViewTransform, Path], ...]


@dataclass(frozen=True)
class EvaluationConfig:
    gt: Path
    mask: bool = False
    cls_labels: Path | None = None
    max_dets: int = 100


@dataclass(frozen=True)
class PipelineConfig:
    classification_inputs: tuple[ClassificationInput, ...]
    aggregation: str
    gate_rule: GateRule
    grounding_sources: tuple[GroundingSource, ...]
    ensemble: EnsembleConfig
    evaluation: EvaluationConfig | None
    config_path: Path
    config_digest: str


def parse_transform(spec) -> ViewTransform:
    """Accept "hflip"-style strings or {"kind": "scale", "factor": 2.0}."""
    if isinstance(spec, str):
        return ViewTransform(spec)
    if isinstance(spec, dict):
        unknown = set(spec) - {"kind", "factor"}
        if unknown:
            raise ValidationError(f"transform has unknown keys {sorted(unknown)}")
        kind = spec.get("kind")
        if kind == "scale":
            return ViewTransform("scale", scale_factor=spec.get("factor"))
        if "factor" in spec:
            raise ValidationError(f"transform {kind!r} takes no factor")
        return ViewTransform(kind if isinstance(kind, str) else repr(kind))
    raise ValidationError(f"transform must be a string or object, got {spec!r}")


def _sha256_file(path: Path) -> str:
    from .core import ParseError

    digest = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                digest.update(chunk)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    return "sha256:" + digest.hexdigest()


def parse_config(path) -> PipelineConfig:
    """Load and strictly validate a pipeline config file.

    Unknown keys are errors, missing sections are reported together, and all
    file paths are resolved relative to the config file's directory.
    """
    path = Path(path)
    obj = load_json_file(path)
    violations: list[Violation] = []
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    for key in obj:
        if key not in ("classification", "grounding", "evaluation"):
            violations.append(Violation("$", f"unknown key {key!r}"))

    base = path.parent

    def resolve(rel) -> Path:
        return (base / rel).resolve() if not Path(rel).is_absolute() else Path(rel)

    def parse_view_list(specs, where) -> list[tuple[ViewTransform, Path]]:
        views = []
        if not (isinstance(specs, list) and specs):
            violations.append(Violation(where, "must be a non-empty list"))
            return views
        for i, rec in enumerate(specs):
            rec_where = f"{where}[{i}]"
            if not isinstance(rec, dict):
                violations.append(Violation(rec_where, "must be an object"))
                continue
            unknown = set(rec) - {"transform", "file"}
            if unknown:
                violations.append(Violation(rec_where, f"unknown keys {sorted(unknown)}"))
            if "file" not in rec or not isinstance(rec["file"], str):
                violations.append(Violation(rec_where, "missing string key 'file'"))
                continue
            try:
                transform = parse_transform(rec.get("transform", "identity"))
            except ValidationError as exc:
                violations.append(Violation(rec_where, str(exc)))
                continue
            views.append((transform, resolve(rec["file"])))
        return views

    # classification section
    cls_inputs: list[ClassificationInput] = []
    aggregation = "mean"
    gate_rule = GateRule("argmax")
    cls_obj = obj.get("classification")
    if cls_obj is None:
        violations.append(Violation("$", "missing section 'classification'"))
    elif not isinstance(cls_obj, dict):
        violations.append(Violation("classification", "must be an object"))
    else:
        for key in cls_obj:
            if key not in ("inputs", "aggregation", "gate"):
                violations.append(Violation("classification", f"unknown key {key!r}"))
        cls_inputs = [
            ClassificationInput(transform=t, path=p)
            for t, p in parse_view_list(cls_obj.get("inputs"), "classification.inputs")
        ]
        aggregation = cls_obj.get("aggregation", "mean")
        if aggregation not in ("mean", "majority_vote"):
            violations.append(
                Violation("classification.aggregation", f"must be 'mean' or 'majority_vote', got {aggregation!r}")
            )
            aggregation = "mean"
        gate_obj = cls_obj.get("gate", {"rule": "argmax"})
        if not isinstance(gate_obj, dict):
            violations.append(Violation("classification.gate", "must be an object"))
        else:
            unknown = set(gate_obj) - {"rule", "threshold"}
            if unknown:
                violations.append(Violation("classification.gate", f"unknown keys {sorted(unknown)}"))
            try:
                gate_rule = GateRule(gate_obj.get("rule", "argmax"), gate_obj.get("threshold"))
            except ValidationError as exc:
                violations.append(Violation("classification.gate", str(exc)))

    # grounding section
    sources: list[GroundingSource] = []
    ens_cfg = EnsembleConfig()
    grounding_obj = obj.get("grounding")
    if grounding_obj is None:
        violations.append(Violation("$", "missing section 'grounding'"))
    elif not isinstance(grounding_obj, dict):
        violations.append(Violation("grounding", "must be an object"))
    else:
        for key in grounding_obj:
            if key not in ("sources", "ensemble"):
                violations.append(Violation("grounding", f"unknown key {key!r}"))
        src_specs = grounding_obj.get("sources")
        if not (isinstance(src_specs, list) and src_specs):
            violations.append(Violation("grounding.sources", "must be a non-empty list"))
        else:
            seen_ids = set()
            for i, rec in enumerate(src_specs):
                where = f"grounding.sources[{i}]"
                if not isinstance(rec, dict):
                    violations.append(Violation(where, "must be an object"))
                    continue
                unknown = set(rec) - {"id", "views"}
                if unknown:
                    violations.append(Violation(where, f"unknown keys {sorted(unknown)}"))
                source_id = rec.get("id")
                if not isinstance(source_id, str) or not source_id:
                    violations.append(Violation(where, "missing non-empty string key 'id'"))
                    continue
                if source_id in seen_ids:
                    violations.append(Violation(where, f"duplicate source id {source_id!r}"))
                    continue
                seen_ids.add(source_id)
                views = parse_view_list(rec.get("views"), f"{where}.views")
                sources.append(GroundingSource(source_id=source_id, views=tuple(views)))
        ens_obj = grounding_obj.get("ensemble", {})
        if not isinstance(ens_obj, dict):
            violations.append(Violation("grounding.ensemble", "must be an object"))
        else:
            unknown = set(ens_obj) - {"strategy", "cluster_iou", "merge_mode", "nms_iou"}
            if unknown:
                violations.append(Violation("grounding.ensemble", f"unknown keys {sorted(unknown)}"))
            else:
                try:
                    ens_cfg = EnsembleConfig(
                        strategy=ens_obj.get("strategy", "affirmative"),
                        cluster_iou=ens_obj.get("cluster_iou", 0.5),
                        merge_mode=ens_obj.get("merge_mode", "nms"),
                        nms_iou=ens_obj.get("nms_iou", 0.5),
                    )
                except ValidationError as exc:
                    violations.append(Violation("grounding.ensemble", str(exc)))

    # evaluation section (optional)
    evaluation = None
    eval_obj = obj.get("evaluation")
    if eval_obj is not None:
        if not isinstance(eval_obj, dict):
            violations.append(Violation("evaluation", "must be an object"))
        else:
            unknown = set(eval_obj) - {"gt", "mask", "cls_labels", "max_dets"}
            if unknown:
                violations.append(Violation("evaluation", f"unknown keys {sorted(unknown)}"))
            gt_rel = eval_obj.get("gt")
            if not isinstance(gt_rel, str):
                violations.append(Violation("evaluation", "missing string key 'gt'"))
            mask = eval_obj.get("mask", False)
            if not isinstance(mask, bool):
                violations.append(Violation("evaluation.mask", f"must be a boolean, got {mask!r}"))
                mask = False
            max_dets = eval_obj.get("max_dets", 100)
            if not isinstance(max_dets, int) or isinstance(max_dets, bool) or max_dets < 1:
                violations.append(Violation("evaluation.max_dets", f"must be a positive integer, got {max_dets!r}"))
                max_dets = 100
            cls_labels = eval_obj.get("cls_labels")
            if cls_labels is not None and not isinstance(cls_labels, str):
                violations.append(Violation("evaluation.cls_labels", f"must be a string, got {cls_labels!r}"))
                cls_labels = None
            if isinstance(gt_rel, str):
                evaluation = EvaluationConfig(
                    gt=resolve(gt_rel),
                    mask=mask,
                    cls_labels=resolve(cls_labels) if cls_labels is not None else None,
                    max_dets=max_dets,
                )

    if violations:
        raise ValidationError(f"{path}: invalid pipeline config", violations)
    return PipelineConfig(
        classification_inputs=tuple(cls_inputs),
        aggregation=aggregation,
        gate_rule=gate_rule,
        grounding_sources=tuple(sources),
        ensemble=ens_cfg,
        evaluation=evaluation,
        config_path=path,
        config_digest=_sha256_file(path),
    )


def gate(outputs: Sequence[ClassificationOutput], rule: GateRule) -> list[GateDecision]:
    """Apply the gate rule to aggregated per-image outputs.

    argmax admits an image only when the bleeding-class probability (index 0)
    is strictly greater than every other class; a tie stays out, because a
    tie carries no evidence and the second stage is the costly one. threshold
    admits when the bleeding-class probability is at or above the cut.
    """
    decisions = []
    for o in outputs:
        if rule.rule == "argmax":
            bleeding = all(o.probs[0] > p for p in o.probs[1:])
        else:
            bleeding = o.probs[0] >= rule.threshold
        decisions.append(GateDecision(image_id=o.image_id, bleeding=bleeding, probs=o.probs))
    return decisions


def _aggregate_views(
    per_view: list[tuple[ViewTransform, list[ClassificationOutput]]], mode: str
) -> list[ClassificationOutput]:
    base_ids = {o.image_id for o in per_view[0][1]}
    for t, outputs in per_view[1:]:
        ids = {o.image_id for o in outputs}
        if ids != base_ids:
            missing = sorted(map(str, base_ids - ids))
            extra = sorted(map(str, ids - base_ids))
            raise ValidationError(
                f"classification view {t.label()}: image set differs (missing {missing}, unexpected {extra})"
            )
    by_image: dict = {}
    for _, outputs in per_view:
        for o in outputs:
            by_image.setdefault(o.image_id, []).append(o)
    return [
        aggregate_classification(by_image[image_id], mode)
        for image_id in sorted(by_image, key=image_id_key)
    ]


def _invert_frame(t: ViewTransform, width: int, height: int) -> tuple[int, int]:
    if t.kind in ("rot90", "rot270"):
        return (height, width)
    if t.kind == "scale":
        s = t.scale_factor
        return (max(1, round(width / s)), max(1, round(height / s)))
    return (width, height)


def _original_frames(
    views: list[tuple[ViewTransform, DetectionSet]], source_id: str
) -> list[ImageMeta]:
    frames: dict = {}
    for t, ds in views:
        for image_id, meta in ds.frame_map().items():
            w, h = _invert_frame(t, meta.width, meta.height)
            candidate = ImageMeta(image_id=image_id, width=w, height=h)
            if transformed_frame(t, candidate) != (meta.width, meta.height):
                raise ValidationError(
                    f"source {source_id!r}, view {t.label()}: image {image_id!r} size "
                    f"{meta.width}x{meta.height} has no consistent original frame"
                )
            known = frames.get(image_id)
            if known is None:
                frames[image_id] = candidate
            elif (known.width, known.height) != (w, h):
                raise ValidationError(
                    f"source {source_id!r}: image {image_id!r} original size conflicts across views: "
                    f"{known.width}x{known.height} vs {w}x{h}"
                )
    return [frames[k] for k in sorted(frames, key=image_id_key)]


@dataclass(frozen=True)
class PipelineResult:
    detections: DetectionSet
    decisions: tuple[GateDecision, ...]
    report: EvalReport | None
    manifest: dict


def _decisions_json(rule: GateRule, decisions: Sequence[GateDecision]) -> dict:
    rule_obj: dict = {"rule": rule.rule}
    if rule.threshold is not None:
        rule_obj["threshold"] = rule.threshold
    return {
        "gate": rule_obj,
        "decisions": [
            {"image_id": d.image_id, "bleeding": d.bleeding, "probs": list(d.probs)}
            for d in decisions
        ],
    }


def run_pipeline(cfg: PipelineConfig, out_dir=None, dry_run: bool = False, threads: int = 1) -> PipelineResult:
    """Execute the two-stage pipeline.

    With ``out_dir`` set (and not ``dry_run``), writes predictions.json,
    gates.json, report files when evaluation is configured, and
    manifest.json last.
    """
    if not cfg.classification_inputs:
        raise ValidationError("pipeline needs at least one classification input")
    if not cfg.grounding_sources:
        raise ValidationError("pipeline needs at least one grounding source")
    input_digests: dict = {}

    def record(path: Path) -> Path:
        rel = str(path)
        input_digests[rel] = _sha256_file(path)
        return path

    # stage 1: classification views -> aggregated probabilities -> gate
    per_view = [
        (ci.transform, load_classification_outputs(record(ci.path)))
        for ci in cfg.classification_inputs
    ]
    aggregated = _aggregate_views(per_view, cfg.aggregation)
    decisions = gate(aggregated, cfg.gate_rule)
    gated_in = {d.image_id for d in decisions if d.bleeding}
    cls_ids = {d.image_id for d in decisions}
    log.info("gate: %d of %d images pass", len(gated_in), len(decisions))

    # evaluation inputs load early: the ground truth is the frame authority
    gt = None
    labels = None
    class_names = None
    if cfg.evaluation is not None:
        from .core import load_ground_truth

        gt = load_ground_truth(record(cfg.evaluation.gt))
        if cfg.evaluation.cls_labels is not None:
            labels, class_names = load_labels(record(cfg.evaluation.cls_labels))

    # stage 2: per-source TTA pooling, gated images only
    pooled_sources = []
    for src in cfg.grounding_sources:
        views = []
        for t, view_path in src.views:
            ds = load_detection_set(record(view_path))
            ds = DetectionSet(
                images=ds.images,
                detections=tuple(replace(d, source_id=src.source_id) for d in ds.detections),
            )
            views.append((t, ds))
        view_ids = {image_id for _, ds in views for image_id in ds.frame_map()}
        unknown = sorted(map(str, view_ids - cls_ids))
        if unknown:
            raise ValidationError(
                f"source {src.source_id!r}: images {unknown} have no classification decision"
            )
        if gt is not None:
            gt_frames = gt.frame_map()
            missing = sorted(map(str, view_ids - set(gt_frames)))
            if missing:
                raise ValidationError(
                    f"source {src.source_id!r}: images {missing} are absent from the ground truth"
                )
            frames = [gt_frames[k] for k in sorted(view_ids, key=image_id_key)]
        else:
            frames = _original_frames(views, src.source_id)
        pooled = pool_views(views, frames)
        pooled = DetectionSet(
            images=pooled.images,
            detections=tuple(d for d in pooled.detections if d.image_id in gated_in),
        )
        pooled_sources.append(pooled)

    final = ensemble(pooled_sources, cfg.ensemble)
    log.info("ensemble: %d detections over %d sources", len(final.detections), len(pooled_sources))

    # stage 3: optional evaluation over every image
    report = None
    if cfg.evaluation is not None:
        report = build_eval_report(
            final,
            gt,
            include_mask=cfg.evaluation.mask,
            cls_outputs=aggregated if labels is not None else None,
            cls_labels=labels,
            class_names=class_names,
            max_dets=cfg.evaluation.max_dets,
            threads=threads,
        )

    manifest = {
        "config": str(cfg.config_path),
        "config_digest": cfg.config_digest,
        "inputs": dict(sorted(input_digests.items())),
        "settings": {
            "aggregation": cfg.aggregation,
            "gate": _decisions_json(cfg.gate_rule, [])["gate"],
            "ensemble": {
                "strategy": cfg.ensemble.strategy,
                "cluster_iou": cfg.ensemble.cluster_iou,
                "merge_mode": cfg.ensemble.merge_mode,
                "nms_iou": cfg.ensemble.nms_iou,
            },
            "threads_requested": threads,
        },
        "counts": {
            "images": len(decisions),
            "gated_in": len(gated_in),
            "gated_out": len(decisions) - len(gated_in),
            "detections": len(final.detections),
        },
        "rules": list(TIE_BREAK_RULES),
    }

    result = PipelineResult(
        detections=final, decisions=tuple(decisions), report=report, manifest=manifest
    )
    if out_dir is not None and not dry_run:
        _write_outputs(result, Path(out_dir))
    return result


def _write_outputs(result: PipelineResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict = {}

    pred_path = out_dir / "predictions.json"
    atomic_write_text(
        pred_path, json.dumps(detection_set_to_json(result.detections), indent=2, sort_keys=True) + "\n"
    )
    written["predictions.json"] = _sha256_file(pred_path)

    gates_path = out_dir / "gates.json"
    gates_obj = _decisions_json_from_result(result)
    atomic_write_text(gates_path, json.dumps(gates_obj, indent=2, sort_keys=True) + "\n")
    written["gates.json"] = _sha256_file(gates_path)

    if result.report is not None:
        for path in write_report_files(result.report, out_dir):
            written[path.relative_to(out_dir).as_posix()] = _sha256_file(path)

    manifest = dict(result.manifest, outputs=dict(sorted(written.items())))
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _decisions_json_from_result(result: PipelineResult) -> dict:
    settings = result.manifest["settings"]["gate"]
    rule = GateRule(settings["rule"], settings.get("threshold"))
    return _decisions_json(rule, result.decisions)
