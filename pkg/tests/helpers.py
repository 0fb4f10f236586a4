"""Small builders shared across the test modules."""

from __future__ import annotations

import json

import numpy as np

from stagekit.core import (
    Annotation,
    BinaryMask,
    BoundingBox,
    Detection,
    DetectionSet,
    GroundTruth,
    ImageMeta,
    detection_set_to_json,
    ground_truth_to_json,
)


def box(x1, y1, x2, y2):
    return BoundingBox(x1, y1, x2, y2)


def det(image_id, x1, y1, x2, y2, score, category_id=1, source_id="m", mask=None):
    return Detection(
        image_id=image_id,
        category_id=category_id,
        score=score,
        box=BoundingBox(x1, y1, x2, y2),
        mask=mask,
        source_id=source_id,
    )


def ann(image_id, x1, y1, x2, y2, category_id=1, mask=None):
    return Annotation(image_id=image_id, category_id=category_id, box=BoundingBox(x1, y1, x2, y2), mask=mask)


def image(image_id, width=100, height=100):
    return ImageMeta(image_id=image_id, width=width, height=height)


def detection_set(images, detections):
    return DetectionSet(images=tuple(images), detections=tuple(detections))


def ground_truth(images, annotations):
    return GroundTruth(images=tuple(images), annotations=tuple(annotations))


def random_mask(rng, width, height, p=0.4):
    bits = (np.asarray([rng.random() for _ in range(width * height)]) < p).reshape(height, width)
    return BinaryMask.from_bitmap(bits)


def write_pred_file(path, ds):
    path.write_text(json.dumps(detection_set_to_json(ds), indent=2), encoding="utf-8")
    return path


def write_gt_file(path, gt):
    path.write_text(json.dumps(ground_truth_to_json(gt), indent=2), encoding="utf-8")
    return path
