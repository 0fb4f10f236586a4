"""Detection, segmentation, and classification evaluation.

Matching is greedy per image and category (highest score first, highest
overlap wins, earlier ground-truth entry wins ties), average precision uses
the 101-point interpolated precision envelope, and the summary block reports
both score-pooled AP and the per-category mean (mAP) over IoU thresholds
0.50:0.05:0.95. With a single category the two families coincide. All block
values are percentages in [0, 100] at full float precision; formatting to
one or four decimals is the report renderer's concern.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .core import (
    Annotation,
    Detection,
    DetectionSet,
    GroundTruth,
    UndefinedOverlapError,
    ValidationError,
    Violation,
    box_iou,
    detection_sort_key,
    load_json_file,
    mask_iou,
)
from .tta import ClassificationOutput

__all__ = [
    "IOU_THRESHOLDS",
    "RECALL_GRID",
    "MatchRecord",
    "MatchResult",
    "match_detections",
    "interpolated_precisions",
    "average_precision",
    "average_recall",
    "coco_summary",
    "classification_metrics",
    "validate_labels_file",
    "load_labels",
]

IOU_THRESHOLDS = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95)

# i/100, not linspace: the oracle-facing contract samples these exact floats
RECALL_GRID = tuple(i / 100 for i in range(101))


@dataclass(frozen=True)
class MatchRecord:
    """One scored detection's fate at a fixed threshold."""

    image_id: Any
    category_id: int
    score: float
    matched: bool
    matched_annotation: int | None  # index into the ground-truth annotation list


@dataclass(frozen=True)
class MatchResult:
    """All detection records (canonical score order) plus the GT count."""

    records: tuple[MatchRecord, ...]
    total_gt: int
    iou_threshold: float
    kind: str


def _pair_iou(d: Detection, a: Annotation, kind: str) -> float:
    if kind == "box":
        return box_iou(d.box, a.box)
    try:
        return mask_iou(d.mask, a.mask)
    except UndefinedOverlapError:
        # two empty masks share no pixels; no overlap evidence, no match
        return 0.0


def match_detections(
    preds: DetectionSet, gt: GroundTruth, iou_threshold: float, kind: str = "box"
) -> MatchResult:
    """Greedily assign predictions to ground truth at one IoU threshold.

    Predictions are visited in canonical order (score descending); each takes
    the not-yet-matched annotation of its image and category with the highest
    IoU at or above the threshold. Equal IoU keeps the annotation that appears
    first in the ground-truth list.
    """
    if kind not in ("box", "mask"):
        raise ValidationError(f"kind must be 'box' or 'mask', got {kind!r}")
    if not 0.0 < iou_threshold <= 1.0:
        raise ValidationError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    gt_frames = gt.frame_map()
    for image_id, meta in preds.frame_map().items():
        known = gt_frames.get(image_id)
        if known is None:
            raise ValidationError(f"prediction image {image_id!r} is absent from the ground truth")
        if (known.width, known.height) != (meta.width, meta.height):
            raise ValidationError(
                f"image {image_id!r}: predictions say {meta.width}x{meta.height}, "
                f"ground truth says {known.width}x{known.height}"
            )
    if kind == "mask":
        missing_d = [i for i, d in enumerate(preds.detections) if d.mask is None]
        missing_a = [i for i, a in enumerate(gt.annotations) if a.mask is None]
        if missing_d or missing_a:
            raise ValidationError(
                "mask evaluation requested but masks are missing: "
                f"detections {missing_d}, annotations {missing_a}"
            )

    by_group: dict = {}
    for idx, a in enumerate(gt.annotations):
        by_group.setdefault((a.image_id, a.category_id), []).append(idx)
    taken = [False] * len(gt.annotations)
    records = []
    for d in sorted(preds.detections, key=detection_sort_key):
        best = None
        best_iou = 0.0
        for idx in by_group.get((d.image_id, d.category_id), ()):
            if taken[idx]:
                continue
            iou = _pair_iou(d, gt.annotations[idx], kind)
            if iou >= iou_threshold and iou > best_iou:
                best = idx
                best_iou = iou
        if best is not None:
            taken[best] = True
        records.append(
            MatchRecord(
                image_id=d.image_id,
                category_id=d.category_id,
                score=d.score,
                matched=best is not None,
                matched_annotation=best,
            )
        )
    return MatchResult(
        records=tuple(records), total_gt=len(gt.annotations), iou_threshold=iou_threshold, kind=kind
    )


def interpolated_precisions(m: MatchResult) -> tuple[float, ...] | None:
    """Precision envelope sampled at each recall grid point.

    Sample i is the highest precision achieved at recall >= i/100, or 0 when
    that recall is never reached. None when there is no ground truth.
    """
    if m.total_gt == 0:
        return None
    if not m.records:
        return (0.0,) * len(RECALL_GRID)
    flags = np.fromiter((r.matched for r in m.records), dtype=np.int64, count=len(m.records))
    tp = np.cumsum(flags)
    fp = np.cumsum(1 - flags)
    recalls = tp / m.total_gt
    precisions = tp / (tp + fp)
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    cut = np.searchsorted(recalls, RECALL_GRID, side="left")
    return tuple(float(envelope[idx]) if idx < len(envelope) else 0.0 for idx in cut)


def average_precision(m: MatchResult) -> float | None:
    """101-point interpolated AP in [0, 1]; None when there is no ground truth."""
    samples = interpolated_precisions(m)
    if samples is None:
        return None
    total = 0.0
    for value in samples:
        total += value
    return total / 101


def average_recall(m: MatchResult, max_dets: int = 100) -> float | None:
    """Fraction of ground truth matched, capped at max_dets detections per image."""
    if not isinstance(max_dets, int) or isinstance(max_dets, bool) or max_dets < 1:
        raise ValidationError(f"max_dets must be a positive integer, got {max_dets!r}")
    if m.total_gt == 0:
        return None
    per_image: dict = {}
    hits = 0
    for r in m.records:
        used = per_image.get(r.image_id, 0)
        if used >= max_dets:
            continue
        per_image[r.image_id] = used + 1
        if r.matched:
            hits += 1
    return hits / m.total_gt


def _filter_category(preds: DetectionSet, gt: GroundTruth, category_id: int):
    sub_preds = DetectionSet(
        images=preds.images,
        detections=tuple(d for d in preds.detections if d.category_id == category_id),
    )
    sub_gt = GroundTruth(
        images=gt.images,
        annotations=tuple(a for a in gt.annotations if a.category_id == category_id),
    )
    return sub_preds, sub_gt


def _threshold_block(preds, gt, categories, thr, kind, max_dets):
    pooled = match_detections(preds, gt, thr, kind)
    ap_values = []
    ar_values = []
    for cat in categories:
        sub_preds, sub_gt = _filter_category(preds, gt, cat)
        m = match_detections(sub_preds, sub_gt, thr, kind)
        ap_values.append(average_precision(m))
        ar_values.append(average_recall(m, max_dets))
    return (
        average_precision(pooled),
        sum(ap_values) / len(ap_values),
        sum(ar_values) / len(ar_values),
    )


def coco_summary(
    preds: DetectionSet, gt: GroundTruth, kind: str = "box", max_dets: int = 100, threads: int = 1
) -> dict:
    """Six-row metric block over IoU thresholds 0.50:0.05:0.95, values x100.

    mAP rows average per-category AP; AP rows pool all categories into one
    ranked list; AR rows average per-category recall at the max_dets budget.
    ``threads`` caps parallelism across thresholds; results are identical at
    any setting.
    """
    if not gt.annotations:
        raise ValidationError("ground truth has no annotations; the summary is undefined")
    if not isinstance(threads, int) or isinstance(threads, bool) or threads < 1:
        raise ValidationError(f"threads must be a positive integer, got {threads!r}")
    categories = sorted({a.category_id for a in gt.annotations})
    per_map: dict = {}
    per_ap: dict = {}
    per_ar: dict = {}
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(
                    lambda thr: _threshold_block(preds, gt, categories, thr, kind, max_dets),
                    IOU_THRESHOLDS,
                )
            )
    else:
        results = [_threshold_block(preds, gt, categories, thr, kind, max_dets) for thr in IOU_THRESHOLDS]
    for thr, (pooled_ap, map_value, ar_value) in zip(IOU_THRESHOLDS, results):
        per_ap[thr] = pooled_ap
        per_map[thr] = map_value
        per_ar[thr] = ar_value
    n = len(IOU_THRESHOLDS)
    return {
        "kind": kind,
        "max_dets": max_dets,
        "mAP@0.5:0.95": 100.0 * sum(per_map[t] for t in IOU_THRESHOLDS) / n,
        "mAP@0.5": 100.0 * per_map[0.50],
        "AP@0.5:0.95": 100.0 * sum(per_ap[t] for t in IOU_THRESHOLDS) / n,
        "AP@0.5": 100.0 * per_ap[0.50],
        "AR@0.5:0.95": 100.0 * sum(per_ar[t] for t in IOU_THRESHOLDS) / n,
        "AR@0.5": 100.0 * per_ar[0.50],
        "per_threshold": {
            "mAP": {f"{t:.2f}": 100.0 * per_map[t] for t in IOU_THRESHOLDS},
            "AP": {f"{t:.2f}": 100.0 * per_ap[t] for t in IOU_THRESHOLDS},
            "AR": {f"{t:.2f}": 100.0 * per_ar[t] for t in IOU_THRESHOLDS},
        },
    }


def _argmax(probs: Sequence[float]) -> int:
    best = 0
    for i in range(1, len(probs)):
        if probs[i] > probs[best]:
            best = i
    return best


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def classification_metrics(
    outputs: Sequence[ClassificationOutput], labels: Sequence[tuple[Any, int]]
) -> dict:
    """Accuracy plus precision/recall/F1, percentages at full precision.

    The hard decision is the argmax class. Two flavors are reported side by
    side because averaging conventions differ: ``positive`` scores class 0
    (the positive class) alone, ``macro`` averages the per-class scores.
    Denominator-free cases (no predicted or no actual members) count as 0.
    """
    if not labels:
        raise ValidationError("no labels to evaluate")
    seen = set()
    for image_id, _ in labels:
        if image_id in seen:
            raise ValidationError(f"duplicate label for image {image_id!r}")
        seen.add(image_id)
    by_image: dict = {}
    for o in outputs:
        if o.image_id in by_image:
            raise ValidationError(f"duplicate prediction for image {o.image_id!r}")
        by_image[o.image_id] = o
    missing = [image_id for image_id, _ in labels if image_id not in by_image]
    if missing:
        raise ValidationError(f"labeled images without predictions: {missing}")
    arity = {len(by_image[image_id].probs) for image_id, _ in labels}
    if len(arity) > 1:
        raise ValidationError(f"predictions disagree on the number of classes: {sorted(arity)}")
    num_classes = arity.pop()
    for image_id, cls in labels:
        if not isinstance(cls, int) or isinstance(cls, bool) or not 0 <= cls < num_classes:
            raise ValidationError(
                f"image {image_id!r}: class {cls!r} out of range for {num_classes} classes"
            )

    correct = 0
    tp = [0] * num_classes
    fp = [0] * num_classes
    fn = [0] * num_classes
    for image_id, actual in labels:
        predicted = _argmax(by_image[image_id].probs)
        if predicted == actual:
            correct += 1
            tp[actual] += 1
        else:
            fp[predicted] += 1
            fn[actual] += 1
    accuracy = correct / len(labels)
    pos = _prf(tp[0], fp[0], fn[0])
    macro = [0.0, 0.0, 0.0]
    for c in range(num_classes):
        scores = _prf(tp[c], fp[c], fn[c])
        for i in range(3):
            macro[i] += scores[i] / num_classes
    return {
        "count": len(labels),
        "num_classes": num_classes,
        "accuracy": 100.0 * accuracy,
        "positive": {"precision": 100.0 * pos[0], "recall": 100.0 * pos[1], "f1": 100.0 * pos[2]},
        "macro": {"precision": 100.0 * macro[0], "recall": 100.0 * macro[1], "f1": 100.0 * macro[2]},
    }


# ---------------------------------------------------------------------------
# Labels file
# ---------------------------------------------------------------------------


def validate_labels_file(obj) -> list:
    from .core import _is_int

    out: list[Violation] = []
    if not isinstance(obj, dict):
        return [Violation("$", "top level must be a JSON object")]
    for key in obj:
        if key not in ("labels", "classes"):
            out.append(Violation("$", f"unknown key {key!r}"))
    if "labels" not in obj:
        out.append(Violation("$", "missing key 'labels'"))
        return out
    if not isinstance(obj["labels"], list):
        return out + [Violation("labels", "must be a list")]
    classes = obj.get("classes")
    if classes is not None and not (isinstance(classes, list) and all(isinstance(c, str) for c in classes)):
        out.append(Violation("classes", "must be a list of strings"))
        classes = None
    seen = set()
    for i, rec in enumerate(obj["labels"]):
        where = f"labels[{i}]"
        if not isinstance(rec, dict):
            out.append(Violation(where, "must be an object"))
            continue
        for key in rec:
            if key not in ("image_id", "class"):
                out.append(Violation(where, f"unknown key {key!r}"))
        image_id = rec.get("image_id")
        if not (_is_int(image_id) or isinstance(image_id, str)):
            out.append(Violation(where, f"image_id must be an integer or string, got {image_id!r}"))
            continue
        if image_id in seen:
            out.append(Violation(where, f"duplicate image id {image_id!r}"))
        seen.add(image_id)
        cls = rec.get("class")
        if not _is_int(cls) or cls < 0:
            out.append(Violation(where, f"class must be a non-negative integer, got {cls!r}"))
            continue
        if classes is not None and cls >= len(classes):
            out.append(Violation(where, f"class {cls} out of range for {len(classes)} declared classes"))
    return out


def load_labels(path) -> tuple[list[tuple[Any, int]], list[str] | None]:
    """Load (image_id, class) labels plus the optional class-name list."""
    obj = load_json_file(path)
    violations = validate_labels_file(obj)
    if violations:
        raise ValidationError(f"{path}: invalid labels file", violations)
    labels = [(rec["image_id"], rec["class"]) for rec in obj["labels"]]
    return labels, obj.get("classes")
