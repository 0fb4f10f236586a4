"""Test-time augmentation support.

Declarative view transforms, exact inverse mapping of boxes and masks from
augmented frames back to the original frame, and aggregation of per-view
classification outputs. Flips and the three right-angle rotations invert
bit-exactly; scaling inverts within floating-point rounding for boxes and
uses nearest-neighbor resampling for masks, so every view is deterministic
to invert without touching pixel data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Iterable, Sequence

import numpy as np

from .core import (
    BinaryMask,
    BoundingBox,
    Detection,
    DetectionSet,
    ImageMeta,
    ValidationError,
    clip_box,
    rle_encode,
)

__all__ = [
    "TRANSFORM_KINDS",
    "ViewTransform",
    "ClassificationOutput",
    "transformed_frame",
    "forward_box",
    "invert_box",
    "forward_mask",
    "invert_mask",
    "pool_views",
    "aggregate_classification",
    "validate_classification_file",
    "load_classification_outputs",
    "classification_outputs_to_json",
]

TRANSFORM_KINDS = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270", "scale")

# rot90 rotates the image a quarter turn counterclockwise: the original
# top-right corner becomes the new top-left. rot270 is its inverse.


@dataclass(frozen=True)
class ViewTransform:
    kind: str
    scale_factor: float | None = None

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValidationError(f"unknown transform kind {self.kind!r}; expected one of {TRANSFORM_KINDS}")
        if self.kind == "scale":
            f = self.scale_factor
            if not isinstance(f, (int, float)) or isinstance(f, bool) or not math.isfinite(f) or f <= 0:
                raise ValidationError(f"scale transform needs a positive scale_factor, got {f!r}")
            object.__setattr__(self, "scale_factor", float(f))
        elif self.scale_factor is not None:
            raise ValidationError(f"{self.kind} transform takes no scale_factor")

    def label(self) -> str:
        if self.kind == "scale":
            return f"scale{self.scale_factor:g}"
        return self.kind


@dataclass(frozen=True)
class ClassificationOutput:
    """Per-image class probability vector (index 0 is the positive class by
    convention of this package, e.g. bleeding)."""

    image_id: Any
    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) < 2:
            raise ValidationError(f"image {self.image_id!r}: need at least two class probabilities")
        if any(not math.isfinite(p) or p < 0 for p in probs):
            raise ValidationError(f"image {self.image_id!r}: probabilities must be finite and >= 0")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise ValidationError(f"image {self.image_id!r}: probabilities sum to {sum(probs)}, not 1")


def transformed_frame(t: ViewTransform, frame: ImageMeta) -> tuple[int, int]:
    """(width, height) of the frame after applying the transform."""
    if t.kind in ("rot90", "rot270"):
        return (frame.height, frame.width)
    if t.kind == "scale":
        s = t.scale_factor
        return (max(1, round(frame.width * s)), max(1, round(frame.height * s)))
    return (frame.width, frame.height)


def _map_point(x: float, y: float, t: ViewTransform, w: int, h: int) -> tuple[float, float]:
    """Forward-map one point; (w, h) is the frame the point currently lives in."""
    if t.kind == "identity":
        return (x, y)
    if t.kind == "hflip":
        return (w - x, y)
    if t.kind == "vflip":
        return (x, h - y)
    if t.kind == "rot90":
        return (y, w - x)
    if t.kind == "rot180":
        return (w - x, h - y)
    if t.kind == "rot270":
        return (h - y, x)
    return (x * t.scale_factor, y * t.scale_factor)


_INVERSES = {
    "identity": "identity",
    "hflip": "hflip",
    "vflip": "vflip",
    "rot90": "rot270",
    "rot180": "rot180",
    "rot270": "rot90",
}


def forward_box(box: BoundingBox, t: ViewTransform, frame: ImageMeta) -> BoundingBox:
    """Map a box from the original frame into the transformed frame."""
    ax, ay = _map_point(box.x1, box.y1, t, frame.width, frame.height)
    bx, by = _map_point(box.x2, box.y2, t, frame.width, frame.height)
    return BoundingBox(min(ax, bx), min(ay, by), max(ax, bx), max(ay, by))


def invert_box(box: BoundingBox, t: ViewTransform, original_frame: ImageMeta) -> BoundingBox:
    """Map a box from the transformed frame back to the original frame.

    Exact for flips and rotations; within floating-point rounding of the
    division for scale.
    """
    if t.kind == "scale":
        s = t.scale_factor
        return BoundingBox(box.x1 / s, box.y1 / s, box.x2 / s, box.y2 / s)
    tw, th = transformed_frame(t, original_frame)
    inv = ViewTransform(_INVERSES[t.kind])
    ax, ay = _map_point(box.x1, box.y1, inv, tw, th)
    bx, by = _map_point(box.x2, box.y2, inv, tw, th)
    return BoundingBox(min(ax, bx), min(ay, by), max(ax, bx), max(ay, by))


def _resize_nearest(bits: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = bits.shape
    rows = np.minimum((np.arange(out_h) + 0.5) * (in_h / out_h), in_h - 1).astype(np.int64)
    cols = np.minimum((np.arange(out_w) + 0.5) * (in_w / out_w), in_w - 1).astype(np.int64)
    return bits[rows][:, cols]


def forward_mask(mask: BinaryMask, t: ViewTransform, frame: ImageMeta) -> BinaryMask:
    """Transform a mask living in the original frame into the view's frame."""
    if (mask.width, mask.height) != (frame.width, frame.height):
        raise ValidationError(
            f"mask is {mask.width}x{mask.height} but the frame is {frame.width}x{frame.height}"
        )
    bits = mask.decode()
    if t.kind == "identity":
        out = bits
    elif t.kind == "hflip":
        out = bits[:, ::-1]
    elif t.kind == "vflip":
        out = bits[::-1, :]
    elif t.kind == "rot90":
        out = np.rot90(bits, k=1)
    elif t.kind == "rot180":
        out = np.rot90(bits, k=2)
    elif t.kind == "rot270":
        out = np.rot90(bits, k=-1)
    else:
        tw, th = transformed_frame(t, frame)
        out = _resize_nearest(bits, th, tw)
    return rle_encode(np.ascontiguousarray(out))


def invert_mask(mask: BinaryMask, t: ViewTransform, original_frame: ImageMeta) -> BinaryMask:
    """Bring a mask from the transformed frame back to the original frame.

    Pixel-exact for flips/rotations; nearest-neighbor resampling for scale.
    """
    tw, th = transformed_frame(t, original_frame)
    if (mask.width, mask.height) != (tw, th):
        raise ValidationError(
            f"mask is {mask.width}x{mask.height} but the {t.label()} view frame is {tw}x{th}"
        )
    bits = mask.decode()
    if t.kind == "identity":
        out = bits
    elif t.kind == "hflip":
        out = bits[:, ::-1]
    elif t.kind == "vflip":
        out = bits[::-1, :]
    elif t.kind == "rot90":
        out = np.rot90(bits, k=-1)
    elif t.kind == "rot180":
        out = np.rot90(bits, k=2)
    elif t.kind == "rot270":
        out = np.rot90(bits, k=1)
    else:
        out = _resize_nearest(bits, original_frame.height, original_frame.width)
    return rle_encode(np.ascontiguousarray(out))


def pool_views(
    per_view: Sequence[tuple[ViewTransform, DetectionSet]],
    original_frames: Iterable[ImageMeta],
) -> DetectionSet:
    """Inverse-map every view's detections into the original frame and pool them.

    Each pooled detection is re-tagged ``<source_id>+<view label>``. No
    deduplication happens here; that is the ensemble/NMS stage's job.
    """
    frames = {im.image_id: im for im in original_frames}
    pooled: list[Detection] = []
    for t, ds in per_view:
        view_frames = ds.frame_map()
        for image_id, meta in view_frames.items():
            original = frames.get(image_id)
            if original is None:
                raise ValidationError(f"view {t.label()}: no original frame known for image {image_id!r}")
            expected = transformed_frame(t, original)
            if (meta.width, meta.height) != expected:
                raise ValidationError(
                    f"view {t.label()}: image {image_id!r} is {meta.width}x{meta.height}, "
                    f"expected {expected[0]}x{expected[1]} for original {original.width}x{original.height}"
                )
        for d in ds.detections:
            original = frames[d.image_id]
            box = invert_box(d.box, t, original)
            clipped = clip_box(box.x1, box.y1, box.x2, box.y2, original.width, original.height)
            if clipped is None:
                raise ValidationError(
                    f"view {t.label()}: detection box {d.box.corners()} inverts outside image {d.image_id!r}"
                )
            mask = invert_mask(d.mask, t, original) if d.mask is not None else None
            pooled.append(
                replace(d, box=BoundingBox(*clipped), mask=mask, source_id=f"{d.source_id}+{t.label()}")
            )
    return DetectionSet(images=tuple(frames.values()), detections=tuple(pooled))


def aggregate_classification(
    outputs: Sequence[ClassificationOutput], mode: str
) -> ClassificationOutput:
    """Combine one image's per-view classification outputs.

    ``mean`` averages the probability vectors and renormalizes; ``majority_vote``
    counts argmax votes and reports vote fractions. Argmax ties resolve to the
    lower class index so pipelines stay reproducible.
    """
    if mode not in ("mean", "majority_vote"):
        raise ValidationError(f"unknown aggregation mode {mode!r}")
    if not outputs:
        raise ValidationError("cannot aggregate an empty list of classification outputs")
    image_ids = {o.image_id for o in outputs}
    if len(image_ids) > 1:
        raise ValidationError(f"aggregation mixes images: {sorted(map(str, image_ids))}")
    arity = {len(o.probs) for o in outputs}
    if len(arity) > 1:
        raise ValidationError(f"class arity mismatch across views: {sorted(arity)}")
    n = len(outputs[0].probs)
    if mode == "mean":
        sums = [0.0] * n
        for o in outputs:
            for i, p in enumerate(o.probs):
                sums[i] += p
        total = sum(sums)
        probs = tuple(s / total for s in sums)
    else:
        votes = [0] * n
        for o in outputs:
            votes[_argmax(o.probs)] += 1
        probs = tuple(v / len(outputs) for v in votes)
    return ClassificationOutput(image_id=outputs[0].image_id, probs=probs)


def _argmax(probs: Sequence[float]) -> int:
    best = 0
    for i in range(1, len(probs)):
        if probs[i] > probs[best]:
            best = i
    return best


# ---------------------------------------------------------------------------
# Canonical classification file
# ---------------------------------------------------------------------------


def validate_classification_file(obj) -> list:
    from .core import Violation, _is_int  # local import to keep the dependency one-way

    out: list[Violation] = []
    if not isinstance(obj, dict):
        return [Violation("$", "top level must be a JSON object")]
    for key in obj:
        if key not in ("outputs", "classes"):
            out.append(Violation("$", f"unknown key {key!r}"))
    if "outputs" not in obj:
        out.append(Violation("$", "missing key 'outputs'"))
        return out
    if not isinstance(obj["outputs"], list):
        return out + [Violation("outputs", "must be a list")]
    classes = obj.get("classes")
    if classes is not None and not (isinstance(classes, list) and all(isinstance(c, str) for c in classes)):
        out.append(Violation("classes", "must be a list of strings"))
        classes = None
    seen = set()
    for i, rec in enumerate(obj["outputs"]):
        where = f"outputs[{i}]"
        if not isinstance(rec, dict):
            out.append(Violation(where, "must be an object"))
            continue
        for key in rec:
            if key not in ("image_id", "probs"):
                out.append(Violation(where, f"unknown key {key!r}"))
        image_id = rec.get("image_id")
        if not (_is_int(image_id) or isinstance(image_id, str)):
            out.append(Violation(where, f"image_id must be an integer or string, got {image_id!r}"))
            continue
        if image_id in seen:
            out.append(Violation(where, f"duplicate image id {image_id!r}"))
        seen.add(image_id)
        probs = rec.get("probs")
        if not (isinstance(probs, list) and len(probs) >= 2):
            out.append(Violation(where, "probs must be a list of at least two numbers"))
            continue
        bad = [p for p in probs if not isinstance(p, (int, float)) or isinstance(p, bool) or not math.isfinite(p) or p < 0]
        if bad:
            out.append(Violation(where, f"probs entries must be finite and >= 0, got {bad}"))
            continue
        if abs(sum(probs) - 1.0) > 1e-6:
            out.append(Violation(where, f"probs sum to {sum(probs)}, not 1"))
        if classes is not None and len(probs) != len(classes):
            out.append(Violation(where, f"probs arity {len(probs)} != {len(classes)} declared classes"))
    return out


def load_classification_outputs(path) -> list[ClassificationOutput]:
    from .core import load_json_file

    obj = load_json_file(path)
    violations = validate_classification_file(obj)
    if violations:
        raise ValidationError(f"{path}: invalid classification file", violations)
    return [
        ClassificationOutput(image_id=rec["image_id"], probs=tuple(float(p) for p in rec["probs"]))
        for rec in obj["outputs"]
    ]


def classification_outputs_to_json(outputs: Sequence[ClassificationOutput], classes: Sequence[str] | None = None) -> dict:
    obj: dict = {}
    if classes is not None:
        obj["classes"] = list(classes)
    obj["outputs"] = [{"image_id": o.image_id, "probs": list(o.probs)} for o in outputs]
    return obj
