"""Multi-source detection fusion.

Detections from several source models (or several TTA views) are greedily
clustered per image and category, clusters are filtered by how many distinct
sources contributed, and each surviving cluster is merged into final boxes.

The affirmative strategy keeps every cluster, trading extra false positives
for sensitivity; consensus requires a majority of sources and unanimous
requires all of them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import (
    BinaryMask,
    BoundingBox,
    Detection,
    DetectionSet,
    ImageMeta,
    ValidationError,
    box_iou,
    detection_sort_key,
    image_id_key,
    nms,
    rle_encode,
)

__all__ = [
    "STRATEGIES",
    "MERGE_MODES",
    "EnsembleConfig",
    "Cluster",
    "cluster_detections",
    "apply_strategy",
    "merge_cluster",
    "ensemble",
]

STRATEGIES = ("affirmative", "consensus", "unanimous")
MERGE_MODES = ("nms", "weighted_average", "max_score")


@dataclass(frozen=True)
class EnsembleConfig:
    strategy: str = "affirmative"
    cluster_iou: float = 0.5
    merge_mode: str = "nms"
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.merge_mode not in MERGE_MODES:
            raise ValidationError(f"unknown merge_mode {self.merge_mode!r}; expected one of {MERGE_MODES}")
        for name in ("cluster_iou", "nms_iou"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not 0.0 < value <= 1.0:
                raise ValidationError(f"{name} must be in (0, 1], got {value!r}")
            object.__setattr__(self, name, float(value))


@dataclass(frozen=True)
class Cluster:
    """Detections of one image+category that overlap a shared seed.

    The seed is ``members[0]``, the highest-score member; every member has
    box IoU >= the clustering threshold against it. ``source_count`` is the
    number of distinct source sets represented.
    """

    members: tuple[Detection, ...]
    source_count: int

    def __post_init__(self):
        if not self.members:
            raise ValidationError("a cluster needs at least one member")
        if self.source_count < 1:
            raise ValidationError("source_count must be >= 1")


def _merged_frames(sets: Sequence[DetectionSet]) -> dict:
    frames: dict = {}
    for idx, ds in enumerate(sets):
        for image_id, meta in ds.frame_map().items():
            known = frames.get(image_id)
            if known is None:
                frames[image_id] = meta
            elif (known.width, known.height) != (meta.width, meta.height):
                raise ValidationError(
                    f"source {idx}: image {image_id!r} is {meta.width}x{meta.height} "
                    f"but an earlier source declared {known.width}x{known.height}"
                )
    return frames


def cluster_detections(sets: Sequence[DetectionSet], cluster_iou: float) -> list[Cluster]:
    """Greedy per-image, per-category clustering across all source sets.

    All detections are ranked by descending score (canonical tie-break, then
    source-set index); each joins the first existing cluster whose seed box
    it overlaps at IoU >= cluster_iou, otherwise it seeds a new cluster.
    """
    if not sets:
        raise ValidationError("need at least one source set")
    if not 0.0 < cluster_iou <= 1.0:
        raise ValidationError(f"cluster_iou must be in (0, 1], got {cluster_iou}")
    _merged_frames(sets)

    tagged = [(d, idx) for idx, ds in enumerate(sets) for d in ds.detections]
    tagged.sort(key=lambda pair: (detection_sort_key(pair[0]), pair[1]))

    # group key -> list of [members, source indices]; cluster creation order
    # within a group follows seed score, so "first cluster" is well defined.
    grouped: dict = {}
    order: list = []
    for d, idx in tagged:
        key = (image_id_key(d.image_id), d.category_id)
        buckets = grouped.setdefault(key, [])
        if not buckets:
            order.append(key)
        for members, sources in buckets:
            if box_iou(d.box, members[0].box) >= cluster_iou:
                members.append(d)
                sources.add(idx)
                break
        else:
            buckets.append(([d], {idx}))

    return [
        Cluster(members=tuple(members), source_count=len(sources))
        for key in order
        for members, sources in grouped[key]
    ]


def apply_strategy(clusters: Sequence[Cluster], strategy: str, num_sources: int) -> list[Cluster]:
    """Filter clusters by source support: all, majority, or every source."""
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if num_sources < 1:
        raise ValidationError("num_sources must be >= 1")
    if strategy == "affirmative":
        need = 1
    elif strategy == "consensus":
        need = (num_sources + 1) // 2
    else:
        need = num_sources
    return [c for c in clusters if c.source_count >= need]


def _majority_mask(masks: Sequence[BinaryMask]) -> BinaryMask:
    stack = np.stack([m.decode() for m in masks])
    votes = stack.sum(axis=0, dtype=np.int64)
    # a pixel survives when at least half the members mark it (ties keep it)
    return rle_encode(2 * votes >= len(masks))


def merge_cluster(c: Cluster, merge_mode: str, nms_iou: float) -> list[Detection]:
    """Collapse one cluster into its final detections.

    ``nms`` may keep several boxes per cluster; ``weighted_average`` emits a
    single score-weighted box (mask by pixelwise majority when every member
    has one); ``max_score`` emits the top member verbatim.
    """
    if merge_mode not in MERGE_MODES:
        raise ValidationError(f"unknown merge_mode {merge_mode!r}; expected one of {MERGE_MODES}")
    if len(c.members) == 1 or merge_mode == "max_score":
        return [c.members[0]]
    if merge_mode == "nms":
        return nms(c.members, nms_iou)
    total = 0.0
    acc = [0.0, 0.0, 0.0, 0.0]
    score = 0.0
    for m in c.members:
        total += m.score
        acc[0] += m.score * m.box.x1
        acc[1] += m.score * m.box.y1
        acc[2] += m.score * m.box.x2
        acc[3] += m.score * m.box.y2
        score = max(score, m.score)
    box = BoundingBox(acc[0] / total, acc[1] / total, acc[2] / total, acc[3] / total)
    mask = None
    if all(m.mask is not None for m in c.members):
        mask = _majority_mask([m.mask for m in c.members])
    top = c.members[0]
    return [
        Detection(
            image_id=top.image_id,
            category_id=top.category_id,
            score=score,
            box=box,
            mask=mask,
            source_id=top.source_id,
        )
    ]


def ensemble(sets: Sequence[DetectionSet], cfg: EnsembleConfig) -> DetectionSet:
    """Cluster, filter by strategy, merge, and pool into one detection set.

    Output detections carry ``source_id="ensemble"`` and canonical ordering,
    so equal inputs in any permutation serialize byte-identically.
    """
    frames = _merged_frames(sets)
    clusters = cluster_detections(sets, cfg.cluster_iou)
    kept = apply_strategy(clusters, cfg.strategy, len(sets))
    merged: list[Detection] = []
    for c in kept:
        for d in merge_cluster(c, cfg.merge_mode, cfg.nms_iou):
            merged.append(replace(d, source_id="ensemble"))
    merged.sort(key=detection_sort_key)
    images = tuple(sorted(frames.values(), key=lambda im: image_id_key(im.image_id)))
    return DetectionSet(images=images, detections=tuple(merged))
