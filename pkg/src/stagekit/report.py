"""Evaluation report assembly and rendering.

One build step computes every requested metric block plus the interpolated
precision-recall curves; separate renderers emit JSON (machine-readable,
full precision), an aligned plain-text table, a flat CSV, and PNG figures.
All renderers are deterministic: identical inputs produce byte-identical
files, so report artifacts can be diffed across runs.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .core import DetectionSet, GroundTruth, atomic_write_bytes, atomic_write_text
from .metrics import (
    IOU_THRESHOLDS,
    RECALL_GRID,
    classification_metrics,
    coco_summary,
    interpolated_precisions,
    match_detections,
)
from .tta import ClassificationOutput

__all__ = [
    "EvalReport",
    "build_eval_report",
    "report_to_json_obj",
    "report_to_text",
    "report_to_csv",
    "write_report_files",
]

SUMMARY_ROWS = ("mAP@0.5:0.95", "mAP@0.5", "AP@0.5:0.95", "AP@0.5", "AR@0.5:0.95", "AR@0.5")


@dataclass(frozen=True)
class EvalReport:
    """Computed metric blocks; a block is None when its inputs were absent."""

    detection: dict | None
    segmentation: dict | None
    classification: dict | None
    curves: dict
    meta: dict


def _curves(preds: DetectionSet, gt: GroundTruth, kind: str) -> dict:
    out = {}
    for thr in IOU_THRESHOLDS:
        samples = interpolated_precisions(match_detections(preds, gt, thr, kind))
        out[f"{thr:.2f}"] = {"recall": list(RECALL_GRID), "precision": list(samples)}
    return out


def build_eval_report(
    preds: DetectionSet,
    gt: GroundTruth,
    *,
    include_mask: bool = False,
    cls_outputs: Sequence[ClassificationOutput] | None = None,
    cls_labels: Sequence[tuple[Any, int]] | None = None,
    class_names: Sequence[str] | None = None,
    max_dets: int = 100,
    threads: int = 1,
) -> EvalReport:
    """Evaluate boxes (always), masks and classification (when supplied)."""
    detection = coco_summary(preds, gt, kind="box", max_dets=max_dets, threads=threads)
    curves = {"detection": _curves(preds, gt, "box")}
    segmentation = None
    if include_mask:
        segmentation = coco_summary(preds, gt, kind="mask", max_dets=max_dets, threads=threads)
        curves["segmentation"] = _curves(preds, gt, "mask")
    classification = None
    if (cls_outputs is None) != (cls_labels is None):
        from .core import ValidationError

        raise ValidationError("classification needs both predictions and labels, got one of the two")
    if cls_outputs is not None:
        classification = classification_metrics(cls_outputs, cls_labels)
        if class_names is not None:
            classification = dict(classification, classes=list(class_names))
    meta = {
        "images": len(gt.images),
        "annotations": len(gt.annotations),
        "detections": len(preds.detections),
        "max_dets": max_dets,
    }
    return EvalReport(
        detection=detection,
        segmentation=segmentation,
        classification=classification,
        curves=curves,
        meta=meta,
    )


def report_to_json_obj(report: EvalReport) -> dict:
    obj: dict = {"meta": report.meta}
    if report.classification is not None:
        obj["classification"] = report.classification
    obj["detection"] = report.detection
    if report.segmentation is not None:
        obj["segmentation"] = report.segmentation
    obj["curves"] = report.curves
    return obj


def _fmt_block_rows(block: dict) -> list[tuple[str, str]]:
    return [(row, f"{block[row]:.1f}") for row in SUMMARY_ROWS]


def report_to_text(report: EvalReport) -> str:
    """Aligned table: classification rows first, then boxes, then masks."""
    lines = ["evaluation report", "================="]
    if report.classification is not None:
        cls = report.classification
        lines.append("")
        lines.append(f"classification ({cls['num_classes']} classes, {cls['count']} images)")
        rows = [("accuracy", f"{cls['accuracy']:.4f}")]
        for mode in ("positive", "macro"):
            for metric in ("precision", "recall", "f1"):
                rows.append((f"{mode} {metric}", f"{cls[mode][metric]:.4f}"))
        width = max(len(name) for name, _ in rows)
        lines += [f"  {name:<{width}}  {value:>9}" for name, value in rows]
    for title, block in (("detection (boxes)", report.detection), ("segmentation (masks)", report.segmentation)):
        if block is None:
            continue
        lines.append("")
        lines.append(f"{title}, max_dets {block['max_dets']}")
        rows = _fmt_block_rows(block)
        width = max(len(name) for name, _ in rows)
        lines += [f"  {name:<{width}}  {value:>6}" for name, value in rows]
    lines.append("")
    return "\n".join(lines)


def report_to_csv(report: EvalReport) -> str:
    """Flat section,metric,value rows at full float precision."""
    rows = ["section,metric,value"]
    if report.classification is not None:
        cls = report.classification
        rows.append(f"classification,accuracy,{cls['accuracy']!r}")
        for mode in ("positive", "macro"):
            for metric in ("precision", "recall", "f1"):
                rows.append(f"classification,{mode} {metric},{cls[mode][metric]!r}")
    for section, block in (("detection", report.detection), ("segmentation", report.segmentation)):
        if block is None:
            continue
        for row in SUMMARY_ROWS:
            rows.append(f"{section},{row},{block[row]!r}")
        for family in ("mAP", "AP", "AR"):
            for key, value in block["per_threshold"][family].items():
                rows.append(f"{section},{family}@{key},{value!r}")
    return "\n".join(rows) + "\n"


def _render_pr_figure(curves: dict, title: str) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for key in sorted(curves):
        curve = curves[key]
        ax.plot(curve["recall"], curve["precision"], label=f"IoU {key}", linewidth=1.2)
    ax.set_xlabel("recall")
    ax.set_ylabel("interpolated precision")
    ax.set_title(title)
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=7, ncol=2)
    ax.grid(True, alpha=0.3)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": "stagekit"})
    plt.close(fig)
    return buf.getvalue()


def _render_summary_figure(report: EvalReport) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    blocks = [("detection", report.detection), ("segmentation", report.segmentation)]
    blocks = [(name, b) for name, b in blocks if b is not None]
    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    positions = range(len(SUMMARY_ROWS))
    bar_width = 0.8 / len(blocks)
    for i, (name, block) in enumerate(blocks):
        values = [block[row] for row in SUMMARY_ROWS]
        ax.bar([p + i * bar_width for p in positions], values, bar_width, label=name)
    ax.set_xticks([p + bar_width * (len(blocks) - 1) / 2 for p in positions])
    ax.set_xticklabels(SUMMARY_ROWS, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("value")
    ax.set_ylim(0, 105)
    ax.set_title("summary metrics")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": "stagekit"})
    plt.close(fig)
    return buf.getvalue()


def _render_classification_figure(cls: dict) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = ["accuracy"]
    values = [cls["accuracy"]]
    for mode in ("positive", "macro"):
        for metric in ("precision", "recall", "f1"):
            names.append(f"{mode}\n{metric}")
            values.append(cls[mode][metric])
    fig, ax = plt.subplots(figsize=(7.2, 3.8))
    ax.bar(range(len(names)), values, color="#4477aa")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, fontsize=8)
    ax.set_ylabel("percent")
    ax.set_ylim(0, 105)
    ax.set_title("classification metrics")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": "stagekit"})
    plt.close(fig)
    return buf.getvalue()


def write_report_files(report: EvalReport, out_dir, figures: bool = True) -> list[Path]:
    """Write report.json, report.txt, report.csv, and figures/*.png.

    Returns the written paths. Every file is written atomically.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    json_path = out_dir / "report.json"
    atomic_write_text(json_path, json.dumps(report_to_json_obj(report), indent=2, sort_keys=True) + "\n")
    written.append(json_path)

    text_path = out_dir / "report.txt"
    atomic_write_text(text_path, report_to_text(report))
    written.append(text_path)

    csv_path = out_dir / "report.csv"
    atomic_write_text(csv_path, report_to_csv(report))
    written.append(csv_path)

    if figures:
        fig_dir = out_dir / "figures"
        fig_dir.mkdir(parents=True, exist_ok=True)
        targets = [("pr_detection.png", _render_pr_figure(report.curves["detection"], "detection precision-recall"))]
        if report.segmentation is not None:
            targets.append(
                ("pr_segmentation.png", _render_pr_figure(report.curves["segmentation"], "segmentation precision-recall"))
            )
        targets.append(("summary.png", _render_summary_figure(report)))
        if report.classification is not None:
            targets.append(("classification.png", _render_classification_figure(report.classification)))
        for name, blob in targets:
            path = fig_dir / name
            atomic_write_bytes(path, blob)
            written.append(path)
    return written
