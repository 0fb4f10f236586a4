"""Geometric primitives, mask run-length coding, and the canonical detection
data model shared by every other module.

Boxes use continuous corner coordinates (x1, y1, x2, y2) with the origin at
the image's top-left corner, x growing right and y growing down. Areas are
plain ``width * height`` products, no +1. Masks are run-length encoded in
column-major order (all rows of column 0, then column 1, ...), starting with
the count of zero pixels.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "StagekitError",
    "ParseError",
    "ValidationError",
    "UndefinedOverlapError",
    "Violation",
    "BoundingBox",
    "BinaryMask",
    "Detection",
    "ImageMeta",
    "Annotation",
    "DetectionSet",
    "GroundTruth",
    "box_area",
    "box_iou",
    "mask_iou",
    "rle_encode",
    "rle_decode",
    "nms",
    "validate_predictions",
    "validate_ground_truth",
    "load_detection_set",
    "load_ground_truth",
    "load_json_file",
    "detection_set_to_json",
    "ground_truth_to_json",
    "save_detection_set",
    "image_id_key",
    "detection_sort_key",
    "clip_box",
    "atomic_write_bytes",
    "atomic_write_text",
]


class StagekitError(Exception):
    """Base class for every error this package raises deliberately."""


class ParseError(StagekitError):
    """A file could not be read or decoded (bad JSON, bad magic, truncation)."""


class UndefinedOverlapError(StagekitError):
    """Overlap ratio is undefined (both masks empty); the caller decides."""


@dataclass(frozen=True)
class Violation:
    """One validation finding, located by a JSON-path-like string."""

    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.where}: {self.message}"


class ValidationError(StagekitError):
    """Input data violates a documented invariant."""

    def __init__(self, message: str, violations: Sequence[Violation] = ()):
        super().__init__(message)
        self.violations = list(violations)

    def detail(self) -> str:
        return "\n".join([str(self)] + [f"  - {v}" for v in self.violations])


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return (_is_int(value) or isinstance(value, float)) and math.isfinite(value)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; zero-area and non-finite boxes are rejected here."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValidationError(f"box coordinate {name} must be a number, got {value!r}")
            object.__setattr__(self, name, float(value))
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"box coordinate {name} is not finite")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValidationError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2}): "
                "requires x1 < x2 and y1 < y2"
            )

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class BinaryMask:
    """Column-major run-length encoded bitmap.

    ``runs`` alternates counts of 0-pixels and 1-pixels over the bitmap read
    column by column, always starting with the count of zeros (a leading 0
    means the very first pixel is set). Canonical runs contain no other zero
    entries and never end with one; non-canonical but consistent run lists
    are accepted and can be normalized with :meth:`canonical`.
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        for name in ("width", "height"):
            if not _is_int(getattr(self, name)) or getattr(self, name) <= 0:
                raise ValidationError(f"mask {name} must be a positive integer")
        object.__setattr__(self, "runs", tuple(self.runs))
        for r in self.runs:
            if not _is_int(r) or r < 0:
                raise ValidationError(f"mask run counts must be non-negative integers, got {r!r}")
        total = sum(self.runs)
        if total != self.width * self.height:
            raise ValidationError(
                f"mask runs sum to {total}, expected width*height = {self.width * self.height}"
            )

    def decode(self) -> np.ndarray:
        """Decode to a (height, width) boolean bitmap."""
        values = np.arange(len(self.runs), dtype=np.uint8) % 2
        flat = np.repeat(values, np.asarray(self.runs, dtype=np.int64))
        return flat.reshape((self.height, self.width), order="F").astype(bool)

    def canonical(self) -> "BinaryMask":
        return rle_encode(self.decode())

    def foreground(self) -> int:
        return int(sum(self.runs[1::2]))

    @classmethod
    def from_bitmap(cls, bitmap, width: int | None = None, height: int | None = None) -> "BinaryMask":
        return rle_encode(bitmap, width=width, height=height)


@dataclass(frozen=True)
class ImageMeta:
    image_id: Any
    width: int
    height: int

    def __post_init__(self):
        if not (_is_int(self.image_id) or isinstance(self.image_id, str)):
            raise ValidationError(f"image_id must be an integer or string, got {self.image_id!r}")
        if not _is_int(self.width) or self.width <= 0:
            raise ValidationError(f"image {self.image_id!r}: width must be a positive integer")
        if not _is_int(self.height) or self.height <= 0:
            raise ValidationError(f"image {self.image_id!r}: height must be a positive integer")


@dataclass(frozen=True)
class Detection:
    """One scored, labeled box with an optional mask, tagged by its producer."""

    image_id: Any
    category_id: int
    score: float
    box: BoundingBox
    mask: BinaryMask | None = None
    source_id: Any = ""

    def __post_init__(self):
        if not _is_int(self.category_id):
            raise ValidationError(f"category_id must be an integer, got {self.category_id!r}")
        if not isinstance(self.score, (int, float)) or isinstance(self.score, bool):
            raise ValidationError(f"score must be a number, got {self.score!r}")
        object.__setattr__(self, "score", float(self.score))
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValidationError(f"score {self.score} out of range [0, 1]")


@dataclass(frozen=True)
class Annotation:
    """A ground-truth record: a labeled box (plus optional mask), no score."""

    image_id: Any
    category_id: int
    box: BoundingBox
    mask: BinaryMask | None = None

    def __post_init__(self):
        if not _is_int(self.category_id):
            raise ValidationError(f"category_id must be an integer, got {self.category_id!r}")


def _integrity_violations(images: Sequence[ImageMeta], records, record_word: str) -> list[Violation]:
    violations = []
    frames: dict[Any, ImageMeta] = {}
    for i, im in enumerate(images):
        if im.image_id in frames:
            violations.append(Violation(f"images[{i}]", f"duplicate image id {im.image_id!r}"))
        frames[im.image_id] = im
    for i, rec in enumerate(records):
        where = f"{record_word}[{i}]"
        im = frames.get(rec.image_id)
        if im is None:
            violations.append(Violation(where, f"unknown image id {rec.image_id!r}"))
            continue
        b = rec.box
        if b.x1 < 0 or b.y1 < 0 or b.x2 > im.width or b.y2 > im.height:
            violations.append(
                Violation(where, f"box {b.corners()} exceeds image bounds {im.width}x{im.height}")
            )
        if rec.mask is not None and (rec.mask.width != im.width or rec.mask.height != im.height):
            violations.append(
                Violation(
                    where,
                    f"mask is {rec.mask.width}x{rec.mask.height}, image is {im.width}x{im.height}",
                )
            )
    return violations


@dataclass(frozen=True)
class DetectionSet:
    """Detections grouped with the image metadata they refer to."""

    images: tuple[ImageMeta, ...]
    detections: tuple[Detection, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "detections", tuple(self.detections))
        violations = _integrity_violations(self.images, self.detections, "detections")
        if violations:
            raise ValidationError("invalid detection set", violations)

    def frame_map(self) -> dict[Any, ImageMeta]:
        return {im.image_id: im for im in self.images}


@dataclass(frozen=True)
class GroundTruth:
    images: tuple[ImageMeta, ...]
    annotations: tuple[Annotation, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        violations = _integrity_violations(self.images, self.annotations, "annotations")
        if violations:
            raise ValidationError("invalid ground truth", violations)

    def frame_map(self) -> dict[Any, ImageMeta]:
        return {im.image_id: im for im in self.images}


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def box_area(b: BoundingBox) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = box_area(a) + box_area(b) - inter
    return inter / union


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Pixel IoU of two same-sized masks.

    Raises UndefinedOverlapError when both masks are empty: there is no
    principled ratio, so the caller picks a policy.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise ValidationError(
            f"mask dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    bits_a = a.decode()
    bits_b = b.decode()
    union = int(np.count_nonzero(bits_a | bits_b))
    if union == 0:
        raise UndefinedOverlapError("both masks are empty; overlap ratio undefined")
    inter = int(np.count_nonzero(bits_a & bits_b))
    return inter / union


def clip_box(x1: float, y1: float, x2: float, y2: float, width: int, height: int):
    """Clip corner coordinates to [0, width] x [0, height].

    Returns the clipped corners, or None when nothing of the box remains
    inside the frame.
    """
    cx1 = min(max(x1, 0.0), float(width))
    cy1 = min(max(y1, 0.0), float(height))
    cx2 = min(max(x2, 0.0), float(width))
    cy2 = min(max(y2, 0.0), float(height))
    if cx1 >= cx2 or cy1 >= cy2:
        return None
    return (cx1, cy1, cx2, cy2)


# ---------------------------------------------------------------------------
# Run-length coding
# ---------------------------------------------------------------------------


def rle_encode(bitmap, width: int | None = None, height: int | None = None) -> BinaryMask:
    """Encode a row-major bit grid into a canonical column-major RLE mask.

    ``bitmap`` can be a 2-D (height, width) array-like, or a flat row-major
    sequence together with explicit ``width`` and ``height``.
    """
    arr = np.asarray(bitmap)
    if arr.ndim == 1:
        if width is None or height is None:
            raise ValidationError("flat bitmaps need explicit width and height")
        if arr.size != width * height:
            raise ValidationError(
                f"bitmap has {arr.size} entries, expected width*height = {width * height}"
            )
        arr = arr.reshape((height, width))
    elif arr.ndim == 2:
        if height is not None and arr.shape[0] != height:
            raise ValidationError(f"bitmap height {arr.shape[0]} != {height}")
        if width is not None and arr.shape[1] != width:
            raise ValidationError(f"bitmap width {arr.shape[1]} != {width}")
    else:
        raise ValidationError(f"bitmap must be 1-D or 2-D, got shape {arr.shape}")

    h, w = arr.shape
    flat = arr.astype(bool).flatten(order="F")
    n = flat.size
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], boundaries, [n]))
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs = [0] + runs
    return BinaryMask(width=w, height=h, runs=tuple(int(r) for r in runs))


def rle_decode(mask: BinaryMask) -> np.ndarray:
    """Decode a mask to its (height, width) boolean bitmap."""
    return mask.decode()


# ---------------------------------------------------------------------------
# Deterministic ordering and NMS
# ---------------------------------------------------------------------------


def image_id_key(image_id) -> tuple:
    """Total order over int-or-string image ids (ints first, numeric order)."""
    if _is_int(image_id):
        return (0, image_id, "")
    return (1, 0, str(image_id))


def detection_sort_key(d: Detection) -> tuple:
    """Canonical ranking: descending score, then a total tie-break.

    Equal scores fall back to lexicographic box corners, then remaining
    fields, so every detection ordering in the package is reproducible and
    independent of input permutation.
    """
    return (
        -d.score,
        image_id_key(d.image_id),
        d.category_id,
        d.box.x1,
        d.box.y1,
        d.box.x2,
        d.box.y2,
        str(d.source_id),
        d.mask.runs if d.mask is not None else (),
    )


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression over one image+category group.

    Keeps a detection iff its IoU with every previously kept detection is
    strictly below the threshold. Output is sorted by descending score under
    the canonical tie-break.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"nms iou_threshold must be in (0, 1], got {iou_threshold}")
    dets = list(dets)
    if len({(d.image_id, d.category_id) for d in dets}) > 1:
        raise ValueError("nms input must share one image_id and category_id")
    kept: list[Detection] = []
    for d in sorted(dets, key=detection_sort_key):
        if all(box_iou(d.box, k.box) < iou_threshold for k in kept):
            kept.append(d)
    return kept


# ---------------------------------------------------------------------------
# Canonical file validation
# ---------------------------------------------------------------------------

_IMAGE_KEYS = {"id", "width", "height"}
_DET_KEYS = {"image_id", "category_id", "score", "bbox", "mask", "source_id"}
_ANN_KEYS = {"image_id", "category_id", "bbox", "mask"}


def _as_dimension(value) -> int | None:
    """Accept integer-valued numbers for pixel dimensions."""
    if _is_int(value) and value > 0:
        return value
    if isinstance(value, float) and math.isfinite(value) and value > 0 and value == int(value):
        return int(value)
    return None


def _check_keys(obj: Mapping, allowed: set, required: set, where: str, out: list[Violation]) -> None:
    for key in obj:
        if key not in allowed:
            out.append(Violation(where, f"unknown key {key!r}"))
    for key in required:
        if key not in obj:
            out.append(Violation(where, f"missing key {key!r}"))


def _validate_images(images, out: list[Violation]) -> dict[Any, tuple[int, int]]:
    frames: dict[Any, tuple[int, int]] = {}
    if not isinstance(images, list):
        out.append(Violation("images", "must be a list"))
        return frames
    for i, im in enumerate(images):
        where = f"images[{i}]"
        if not isinstance(im, Mapping):
            out.append(Violation(where, "must be an object"))
            continue
        _check_keys(im, _IMAGE_KEYS, _IMAGE_KEYS, where, out)
        image_id = im.get("id")
        if not (_is_int(image_id) or isinstance(image_id, str)):
            out.append(Violation(where, f"id must be an integer or string, got {image_id!r}"))
            continue
        width = _as_dimension(im.get("width"))
        height = _as_dimension(im.get("height"))
        if width is None or height is None:
            out.append(Violation(where, "width and height must be positive integers"))
            continue
        if image_id in frames:
            out.append(Violation(where, f"duplicate image id {image_id!r}"))
        frames[image_id] = (width, height)
    return frames


def _validate_bbox(bbox, frame: tuple[int, int] | None, where: str, out: list[Violation]) -> None:
    if not (isinstance(bbox, list) and len(bbox) == 4 and all(_is_number(v) for v in bbox)):
        out.append(Violation(where, f"bbox must be a list of 4 finite numbers, got {bbox!r}"))
        return
    x1, y1, x2, y2 = (float(v) for v in bbox)
    if not (x1 < x2 and y1 < y2):
        out.append(Violation(where, f"bbox {bbox} is degenerate (needs x1 < x2 and y1 < y2)"))
        return
    if frame is not None and clip_box(x1, y1, x2, y2, frame[0], frame[1]) is None:
        out.append(Violation(where, f"bbox {bbox} lies entirely outside the {frame[0]}x{frame[1]} frame"))


def _validate_mask(mask, frame: tuple[int, int] | None, where: str, out: list[Violation]) -> None:
    if mask is None:
        return
    if not isinstance(mask, Mapping):
        out.append(Violation(where, "mask must be null or an object"))
        return
    _check_keys(mask, {"size", "runs"}, {"size", "runs"}, where, out)
    size = mask.get("size")
    if not (isinstance(size, list) and len(size) == 2):
        out.append(Violation(where, f"mask size must be [height, width], got {size!r}"))
        return
    mh = _as_dimension(size[0])
    mw = _as_dimension(size[1])
    if mh is None or mw is None:
        out.append(Violation(where, f"mask size entries must be positive integers, got {size!r}"))
        return
    if frame is not None and (mw, mh) != frame:
        out.append(Violation(where, f"mask size {mw}x{mh} does not match image size {frame[0]}x{frame[1]}"))
    runs = mask.get("runs")
    if not (isinstance(runs, list) and all(_is_int(r) and r >= 0 for r in runs)):
        out.append(Violation(where, "mask runs must be a list of non-negative integers"))
        return
    if sum(runs) != mw * mh:
        out.append(Violation(where, f"mask runs sum to {sum(runs)}, expected {mw * mh}"))


def _validate_dataset(obj, record_key: str, with_scores: bool) -> list[Violation]:
    out: list[Violation] = []
    if not isinstance(obj, Mapping):
        return [Violation("$", "top level must be a JSON object")]
    _check_keys(obj, {"images", record_key}, {"images", record_key}, "$", out)
    frames = _validate_images(obj.get("images", []), out)
    records = obj.get(record_key, [])
    if not isinstance(records, list):
        out.append(Violation(record_key, "must be a list"))
        return out
    allowed = _DET_KEYS if with_scores else _ANN_KEYS
    required = allowed - {"mask"}
    for i, rec in enumerate(records):
        where = f"{record_key}[{i}]"
        if not isinstance(rec, Mapping):
            out.append(Violation(where, "must be an object"))
            continue
        _check_keys(rec, allowed, required, where, out)
        image_id = rec.get("image_id")
        frame = frames.get(image_id)
        if frame is None and "image_id" in rec:
            out.append(Violation(where, f"unknown image id {image_id!r}"))
        if "category_id" in rec and not _is_int(rec["category_id"]):
            out.append(Violation(where, f"category_id must be an integer, got {rec['category_id']!r}"))
        if with_scores and "score" in rec:
            score = rec["score"]
            if not _is_number(score) or not 0.0 <= float(score) <= 1.0:
                out.append(Violation(where, f"score {score!r} out of range [0, 1]"))
        if with_scores and "source_id" in rec:
            if not (_is_int(rec["source_id"]) or isinstance(rec["source_id"], str)):
                out.append(Violation(where, "source_id must be an integer or string"))
        if "bbox" in rec:
            _validate_bbox(rec["bbox"], frame, f"{where}.bbox", out)
        _validate_mask(rec.get("mask"), frame, f"{where}.mask", out)
    return out


def validate_predictions(obj) -> list[Violation]:
    """Validate a canonical prediction file object; empty list iff well-formed."""
    if isinstance(obj, DetectionSet):
        obj = detection_set_to_json(obj)
    return _validate_dataset(obj, "detections", with_scores=True)


def validate_ground_truth(obj) -> list[Violation]:
    """Validate a canonical ground-truth file object; empty list iff well-formed."""
    if isinstance(obj, GroundTruth):
        obj = ground_truth_to_json(obj)
    return _validate_dataset(obj, "annotations", with_scores=False)


# ---------------------------------------------------------------------------
# Canonical file I/O
# ---------------------------------------------------------------------------


def load_json_file(path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _mask_from_json(mask) -> BinaryMask | None:
    if mask is None:
        return None
    h, w = int(mask["size"][0]), int(mask["size"][1])
    return BinaryMask(width=w, height=h, runs=tuple(int(r) for r in mask["runs"]))


def _clipped_box(rec, frame: tuple[int, int], clip_count: list[int]) -> BoundingBox:
    x1, y1, x2, y2 = (float(v) for v in rec["bbox"])
    clipped = clip_box(x1, y1, x2, y2, frame[0], frame[1])
    if clipped != (x1, y1, x2, y2):
        clip_count[0] += 1
    return BoundingBox(*clipped)


def load_detection_set(path) -> DetectionSet:
    """Parse, validate, and build a canonical prediction file.

    Out-of-bounds boxes are clipped to the image frame with a warning;
    anything else wrong raises ValidationError carrying the full report.
    """
    path = Path(path)
    obj = load_json_file(path)
    violations = validate_predictions(obj)
    if violations:
        raise ValidationError(f"{path}: invalid prediction file", violations)
    images = tuple(ImageMeta(im["id"], int(im["width"]), int(im["height"])) for im in obj["images"])
    frames = {im.image_id: (im.width, im.height) for im in images}
    clip_count = [0]
    detections = tuple(
        Detection(
            image_id=rec["image_id"],
            category_id=rec["category_id"],
            score=float(rec["score"]),
            box=_clipped_box(rec, frames[rec["image_id"]], clip_count),
            mask=_mask_from_json(rec.get("mask")),
            source_id=rec["source_id"],
        )
        for rec in obj["detections"]
    )
    if clip_count[0]:
        log.warning("%s: clipped %d out-of-bounds box(es) to their image frames", path, clip_count[0])
    return DetectionSet(images=images, detections=detections)


def load_ground_truth(path) -> GroundTruth:
    path = Path(path)
    obj = load_json_file(path)
    violations = validate_ground_truth(obj)
    if violations:
        raise ValidationError(f"{path}: invalid ground-truth file", violations)
    images = tuple(ImageMeta(im["id"], int(im["width"]), int(im["height"])) for im in obj["images"])
    frames = {im.image_id: (im.width, im.height) for im in images}
    clip_count = [0]
    annotations = tuple(
        Annotation(
            image_id=rec["image_id"],
            category_id=rec["category_id"],
            box=_clipped_box(rec, frames[rec["image_id"]], clip_count),
            mask=_mask_from_json(rec.get("mask")),
        )
        for rec in obj["annotations"]
    )
    if clip_count[0]:
        log.warning("%s: clipped %d out-of-bounds box(es) to their image frames", path, clip_count[0])
    return GroundTruth(images=images, annotations=annotations)


def _mask_to_json(mask: BinaryMask | None):
    if mask is None:
        return None
    return {"size": [mask.height, mask.width], "runs": list(mask.runs)}


def detection_set_to_json(ds: DetectionSet) -> dict:
    return {
        "images": [{"id": im.image_id, "width": im.width, "height": im.height} for im in ds.images],
        "detections": [
            {
                "image_id": d.image_id,
                "category_id": d.category_id,
                "score": d.score,
                "bbox": list(d.box.corners()),
                "mask": _mask_to_json(d.mask),
                "source_id": d.source_id,
            }
            for d in ds.detections
        ],
    }


def ground_truth_to_json(gt: GroundTruth) -> dict:
    return {
        "images": [{"id": im.image_id, "width": im.width, "height": im.height} for im in gt.images],
        "annotations": [
            {
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": list(a.box.corners()),
                "mask": _mask_to_json(a.mask),
            }
            for a in gt.annotations
        ],
    }


def save_detection_set(ds: DetectionSet, path) -> None:
    atomic_write_text(path, json.dumps(detection_set_to_json(ds), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Atomic file writes
# ---------------------------------------------------------------------------


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
