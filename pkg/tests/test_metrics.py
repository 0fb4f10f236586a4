"""Tests for matching, AP/AR, the summary block, and classification scores."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import ann, det, detection_set, ground_truth, image, random_mask
from oracles import oracle_ap, oracle_ar, oracle_coco_block, oracle_match
from stagekit.core import BinaryMask, ValidationError
from stagekit.metrics import (
    IOU_THRESHOLDS,
    MatchResult,
    average_precision,
    average_recall,
    classification_metrics,
    coco_summary,
    load_labels,
    match_detections,
    validate_labels_file,
)
from stagekit.tta import ClassificationOutput


def tiny(preds, anns, images=None):
    images = images or [image(1)]
    return detection_set(images, preds), ground_truth(images, anns)


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


def test_perfect_single_match():
    preds, gt = tiny([det(1, 10, 10, 20, 20, 0.9)], [ann(1, 10, 10, 20, 20)])
    m = match_detections(preds, gt, 0.5)
    assert [r.matched for r in m.records] == [True]
    assert m.records[0].matched_annotation == 0
    assert m.total_gt == 1


def test_second_overlapping_prediction_is_fp():
    preds, gt = tiny(
        [det(1, 10, 10, 20, 20, 0.9), det(1, 10, 10, 20, 21, 0.8)],
        [ann(1, 10, 10, 20, 20)],
    )
    m = match_detections(preds, gt, 0.5)
    assert [r.matched for r in m.records] == [True, False]
    assert m.records[0].score == 0.9


def test_no_predictions_all_misses():
    preds, gt = tiny([], [ann(1, 10, 10, 20, 20)])
    m = match_detections(preds, gt, 0.5)
    assert m.records == ()
    assert m.total_gt == 1


def test_highest_iou_wins():
    # the prediction overlaps both annotations above threshold but sits
    # exactly on the second one
    preds, gt = tiny(
        [det(1, 10, 10, 20, 20, 0.9)],
        [ann(1, 10, 10, 20, 22), ann(1, 10, 10, 20, 20)],
    )
    m = match_detections(preds, gt, 0.5)
    assert m.records[0].matched_annotation == 1


def test_iou_tie_prefers_earlier_annotation():
    # two identical annotations: the first one in file order is taken
    preds, gt = tiny(
        [det(1, 10, 10, 20, 20, 0.9)],
        [ann(1, 10, 10, 20, 20), ann(1, 10, 10, 20, 20)],
    )
    m = match_detections(preds, gt, 0.5)
    assert m.records[0].matched_annotation == 0


def test_threshold_is_inclusive():
    # IoU exactly 0.5: boxes (0,0,10,10) and (0,0,10,5) give 50/100
    preds, gt = tiny([det(1, 0, 0, 10, 10, 0.9)], [ann(1, 0, 0, 10, 5)])
    m = match_detections(preds, gt, 0.5)
    assert m.records[0].matched


def test_category_mismatch_never_matches():
    preds, gt = tiny([det(1, 10, 10, 20, 20, 0.9, category_id=2)], [ann(1, 10, 10, 20, 20)])
    m = match_detections(preds, gt, 0.5)
    assert not m.records[0].matched


def test_match_rejects_unknown_image():
    preds = detection_set([image(2)], [det(2, 0, 0, 10, 10, 0.9)])
    gt = ground_truth([image(1)], [ann(1, 0, 0, 10, 10)])
    with pytest.raises(ValidationError, match="absent from the ground truth"):
        match_detections(preds, gt, 0.5)


def test_match_rejects_dimension_conflict():
    preds = detection_set([image(1, 100, 100)], [det(1, 0, 0, 10, 10, 0.9)])
    gt = ground_truth([image(1, 100, 90)], [ann(1, 0, 0, 10, 10)])
    with pytest.raises(ValidationError, match="100x90"):
        match_detections(preds, gt, 0.5)


def test_mask_kind_requires_masks():
    preds, gt = tiny([det(1, 0, 0, 10, 10, 0.9)], [ann(1, 0, 0, 10, 10)])
    with pytest.raises(ValidationError, match="detections \\[0\\]"):
        match_detections(preds, gt, 0.5, kind="mask")


def test_mask_matching_uses_pixel_overlap():
    full = BinaryMask(width=100, height=100, runs=(0, 10000))
    disjoint = BinaryMask(width=100, height=100, runs=(10000,))
    preds, gt = tiny(
        [det(1, 0, 0, 10, 10, 0.9, mask=full)],
        [ann(1, 0, 0, 10, 10, mask=full), ann(1, 20, 20, 30, 30, mask=disjoint)],
    )
    m = match_detections(preds, gt, 0.5, kind="mask")
    assert m.records[0].matched_annotation == 0


def test_two_empty_masks_do_not_match():
    empty = BinaryMask(width=100, height=100, runs=(10000,))
    preds, gt = tiny(
        [det(1, 0, 0, 10, 10, 0.9, mask=empty)],
        [ann(1, 0, 0, 10, 10, mask=empty)],
    )
    m = match_detections(preds, gt, 0.5, kind="mask")
    assert not m.records[0].matched


def test_match_parameter_validation():
    preds, gt = tiny([det(1, 0, 0, 10, 10, 0.9)], [ann(1, 0, 0, 10, 10)])
    with pytest.raises(ValidationError):
        match_detections(preds, gt, 0.5, kind="contour")
    with pytest.raises(ValidationError):
        match_detections(preds, gt, 0.0)


# ---------------------------------------------------------------------------
# AP / AR
# ---------------------------------------------------------------------------


def _result(flags, total_gt, image_ids=None, scores=None):
    from stagekit.metrics import MatchRecord

    n = len(flags)
    image_ids = image_ids or [1] * n
    scores = scores or [0.9 - 0.1 * i for i in range(n)]
    records = tuple(
        MatchRecord(image_id=image_ids[i], category_id=1, score=scores[i], matched=flags[i], matched_annotation=None)
        for i in range(n)
    )
    return MatchResult(records=records, total_gt=total_gt, iou_threshold=0.5, kind="box")


def test_ap_perfect():
    assert average_precision(_result([True, True], 2)) == 1.0


def test_ap_no_matches():
    assert average_precision(_result([False, False], 2)) == 0.0


def test_ap_no_detections():
    assert average_precision(_result([], 2)) == 0.0


def test_ap_undefined_without_gt():
    assert average_precision(_result([False], 0)) is None


def test_ap_tp_fp_tp_frozen_value():
    m = _result([True, False, True], 2)
    ap = average_precision(m)
    assert ap == pytest.approx(253 / 303, abs=1e-12)
    records = [(r.image_id, r.score, r.matched) for r in m.records]
    assert ap == oracle_ap(records, 2)


def test_ar_basics():
    assert average_recall(_result([True, True], 2)) == 1.0
    assert average_recall(_result([], 2)) == 0.0
    assert average_recall(_result([True, True], 3)) == pytest.approx(2 / 3)
    assert average_recall(_result([False], 0)) is None


def test_ar_budget_is_per_image():
    # one image exhausts its budget; a second image still counts
    m = _result(
        [True, True, True],
        3,
        image_ids=[1, 1, 2],
        scores=[0.9, 0.8, 0.7],
    )
    assert average_recall(m, max_dets=1) == pytest.approx(2 / 3)
    assert average_recall(m, max_dets=2) == 1.0


def test_ar_budget_drops_low_scores_first():
    # records arrive in canonical (descending score) order, so the cap
    # removes the tail
    m = _result([False, True], 1, scores=[0.9, 0.8])
    assert average_recall(m, max_dets=1) == 0.0


def test_ar_rejects_bad_budget():
    with pytest.raises(ValidationError):
        average_recall(_result([True], 1), max_dets=0)


# ---------------------------------------------------------------------------
# Summary block
# ---------------------------------------------------------------------------

ROWS = ("mAP@0.5:0.95", "mAP@0.5", "AP@0.5:0.95", "AP@0.5", "AR@0.5:0.95", "AR@0.5")


def test_summary_perfect_predictions():
    images = [image(1), image(2)]
    anns = [ann(1, 10, 10, 30, 30), ann(2, 5, 5, 50, 50), ann(2, 60, 60, 70, 80)]
    preds = [det(a.image_id, a.box.x1, a.box.y1, a.box.x2, a.box.y2, 0.9) for a in anns]
    block = coco_summary(detection_set(images, preds), ground_truth(images, anns))
    for row in ROWS:
        assert block[row] == 100.0


def test_summary_empty_predictions():
    preds, gt = tiny([], [ann(1, 10, 10, 30, 30)])
    block = coco_summary(preds, gt)
    for row in ROWS:
        assert block[row] == 0.0


def test_summary_requires_ground_truth():
    preds, gt = tiny([det(1, 0, 0, 10, 10, 0.9)], [])
    with pytest.raises(ValidationError, match="no annotations"):
        coco_summary(preds, gt)


def test_summary_single_category_map_equals_ap():
    preds, gt = tiny(
        [det(1, 0, 0, 10, 10, 0.9), det(1, 0, 0, 10, 6, 0.8), det(1, 40, 40, 50, 50, 0.7)],
        [ann(1, 0, 0, 10, 10), ann(1, 40, 40, 50, 52)],
    )
    block = coco_summary(preds, gt)
    assert block["mAP@0.5:0.95"] == block["AP@0.5:0.95"]
    assert block["mAP@0.5"] == block["AP@0.5"]
    assert block["per_threshold"]["mAP"] == block["per_threshold"]["AP"]


def test_summary_matches_oracle_on_crafted_dataset():
    images = [image(1), image(2), image(3)]
    preds = detection_set(
        images,
        [
            det(1, 0, 0, 10, 10, 0.9),
            det(1, 2, 0, 12, 10, 0.85, category_id=2),
            det(1, 0, 0, 10, 6, 0.8),
            det(2, 20, 20, 40, 40, 0.7),
            det(2, 21, 20, 41, 40, 0.65),
            det(3, 5, 5, 6, 6, 0.5, category_id=2),
        ],
    )
    gt = ground_truth(
        images,
        [
            ann(1, 0, 0, 10, 10),
            ann(1, 1, 0, 11, 10, category_id=2),
            ann(2, 20, 20, 40, 40),
            ann(3, 50, 50, 60, 60, category_id=2),
        ],
    )
    block = coco_summary(preds, gt)
    expected = oracle_coco_block(list(preds.detections), list(gt.annotations), "box")
    for row in ROWS:
        assert block[row] == pytest.approx(expected[row], abs=1e-9)
    for family in ("mAP", "AP", "AR"):
        for key, value in expected["per_threshold"][family].items():
            assert block["per_threshold"][family][key] == pytest.approx(value, abs=1e-9)


@st.composite
def mini_dataset(draw, with_masks=False, size=16, max_categories=2):
    num_images = draw(st.integers(1, 3))
    images = [image(i, size, size) for i in range(1, num_images + 1)]

    def one(kind):
        image_id = draw(st.integers(1, num_images))
        x1 = draw(st.integers(0, size - 1))
        x2 = draw(st.integers(x1 + 1, size))
        y1 = draw(st.integers(0, size - 1))
        y2 = draw(st.integers(y1 + 1, size))
        category_id = draw(st.integers(1, max_categories))
        mask = None
        if with_masks:
            mask = random_mask(np.random.default_rng(draw(st.integers(0, 2**16))), size, size)
        if kind == "det":
            score = draw(st.integers(1, 100)) / 100
            return det(image_id, x1, y1, x2, y2, score, category_id=category_id, mask=mask)
        return ann(image_id, x1, y1, x2, y2, category_id=category_id, mask=mask)

    num_dets = draw(st.integers(0, 6))
    num_anns = draw(st.integers(1, 4))
    preds = detection_set(images, [one("det") for _ in range(num_dets)])
    gt = ground_truth(images, [one("ann") for _ in range(num_anns)])
    return preds, gt


@settings(max_examples=150)
@given(data=mini_dataset())
def test_summary_matches_oracle_box(data):
    preds, gt = data
    block = coco_summary(preds, gt)
    expected = oracle_coco_block(list(preds.detections), list(gt.annotations), "box")
    for row in ROWS:
        assert block[row] == pytest.approx(expected[row], abs=1e-9)


@settings(max_examples=40)
@given(data=mini_dataset(with_masks=True, size=8))
def test_summary_matches_oracle_mask(data):
    preds, gt = data
    block = coco_summary(preds, gt, kind="mask")
    expected = oracle_coco_block(list(preds.detections), list(gt.annotations), "mask")
    for row in ROWS:
        assert block[row] == pytest.approx(expected[row], abs=1e-9)


@settings(max_examples=60)
@given(data=mini_dataset())
def test_match_against_oracle(data):
    preds, gt = data
    for thr in (0.5, 0.75):
        m = match_detections(preds, gt, thr)
        got = [(r.image_id, r.score, r.matched) for r in m.records]
        expected, total = oracle_match(list(preds.detections), list(gt.annotations), thr, "box")
        assert got == expected
        assert m.total_gt == total
        assert average_recall(m, 100) == oracle_ar(expected, total, 100)


@settings(max_examples=60)
@given(data=mini_dataset())
def test_rank_invariance_under_score_squaring(data):
    preds, gt = data
    squared = detection_set(
        list(preds.images),
        [
            det(d.image_id, d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.score * d.score,
                category_id=d.category_id, source_id=d.source_id, mask=d.mask)
            for d in preds.detections
        ],
    )
    base = coco_summary(preds, gt)
    warped = coco_summary(squared, gt)
    for row in ROWS:
        assert warped[row] == pytest.approx(base[row], abs=1e-12)


@settings(max_examples=60)
@given(data=mini_dataset())
def test_new_tail_match_helps(data):
    preds, gt = data
    m = match_detections(preds, gt, 0.5)
    unmatched = set(range(len(gt.annotations))) - {
        r.matched_annotation for r in m.records if r.matched
    }
    if not unmatched:
        return
    target = gt.annotations[min(unmatched)]
    floor_score = min((d.score for d in preds.detections), default=1.0)
    if floor_score <= 0.001:
        return
    extra = det(
        target.image_id,
        target.box.x1,
        target.box.y1,
        target.box.x2,
        target.box.y2,
        floor_score / 2,
        category_id=target.category_id,
    )
    grown = detection_set(list(preds.images), list(preds.detections) + [extra])
    before_ap = average_precision(m)
    before_ar = average_recall(m, 100)
    after = match_detections(grown, gt, 0.5)
    assert average_precision(after) >= before_ap
    assert average_recall(after, 100) > before_ar


# ---------------------------------------------------------------------------
# Classification metrics
# ---------------------------------------------------------------------------


def out(image_id, *probs):
    return ClassificationOutput(image_id=image_id, probs=tuple(probs))


def test_classification_all_correct():
    outputs = [out(1, 0.9, 0.1), out(2, 0.2, 0.8)]
    labels = [(1, 0), (2, 1)]
    block = classification_metrics(outputs, labels)
    assert block["accuracy"] == 100.0
    assert block["positive"] == {"precision": 100.0, "recall": 100.0, "f1": 100.0}
    assert block["macro"] == {"precision": 100.0, "recall": 100.0, "f1": 100.0}


def test_classification_confusion_example():
    # TP=2 FP=1 FN=1 TN=1 for the positive class (index 0)
    outputs = [
        out("a", 0.9, 0.1),  # predicted 0, actual 0 -> TP
        out("b", 0.8, 0.2),  # predicted 0, actual 0 -> TP
        out("c", 0.7, 0.3),  # predicted 0, actual 1 -> FP
        out("d", 0.2, 0.8),  # predicted 1, actual 0 -> FN
        out("e", 0.1, 0.9),  # predicted 1, actual 1 -> TN
    ]
    labels = [("a", 0), ("b", 0), ("c", 1), ("d", 0), ("e", 1)]
    block = classification_metrics(outputs, labels)
    assert block["positive"]["precision"] == pytest.approx(200 / 3, abs=1e-9)
    assert block["positive"]["recall"] == pytest.approx(200 / 3, abs=1e-9)
    assert block["positive"]["f1"] == pytest.approx(200 / 3, abs=1e-9)
    assert block["accuracy"] == pytest.approx(60.0)
    # macro: class 1 has precision 1/2, recall 1/2, f1 1/2
    assert block["macro"]["precision"] == pytest.approx(100 * (2 / 3 + 1 / 2) / 2, abs=1e-9)
    assert block["macro"]["f1"] == pytest.approx(100 * (2 / 3 + 1 / 2) / 2, abs=1e-9)


def test_classification_degenerate_predictor():
    outputs = [out(1, 0.1, 0.9), out(2, 0.2, 0.8), out(3, 0.3, 0.7), out(4, 0.4, 0.6)]
    labels = [(1, 0), (2, 0), (3, 1), (4, 1)]
    block = classification_metrics(outputs, labels)
    assert block["positive"]["recall"] == 0.0
    assert block["positive"]["precision"] == 0.0
    assert block["accuracy"] == 50.0


def test_classification_argmax_tie_is_lower_index():
    block = classification_metrics([out(1, 0.5, 0.5)], [(1, 0)])
    assert block["accuracy"] == 100.0


def test_classification_errors():
    with pytest.raises(ValidationError, match="no labels"):
        classification_metrics([out(1, 0.9, 0.1)], [])
    with pytest.raises(ValidationError, match="duplicate label"):
        classification_metrics([out(1, 0.9, 0.1)], [(1, 0), (1, 0)])
    with pytest.raises(ValidationError, match="without predictions"):
        classification_metrics([out(1, 0.9, 0.1)], [(1, 0), (2, 1)])
    with pytest.raises(ValidationError, match="duplicate prediction"):
        classification_metrics([out(1, 0.9, 0.1), out(1, 0.8, 0.2)], [(1, 0)])
    with pytest.raises(ValidationError, match="out of range"):
        classification_metrics([out(1, 0.9, 0.1)], [(1, 2)])
    with pytest.raises(ValidationError, match="disagree"):
        classification_metrics([out(1, 0.9, 0.1), out(2, 0.5, 0.3, 0.2)], [(1, 0), (2, 1)])


def test_extra_predictions_are_ignored():
    block = classification_metrics([out(1, 0.9, 0.1), out(99, 0.1, 0.9)], [(1, 0)])
    assert block["count"] == 1
    assert block["accuracy"] == 100.0


# ---------------------------------------------------------------------------
# Labels file
# ---------------------------------------------------------------------------


def test_labels_round_trip(tmp_path):
    path = tmp_path / "labels.json"
    path.write_text(
        json.dumps(
            {
                "classes": ["bleeding", "non_bleeding"],
                "labels": [{"image_id": 1, "class": 0}, {"image_id": "x", "class": 1}],
            }
        )
    )
    labels, classes = load_labels(path)
    assert labels == [(1, 0), ("x", 1)]
    assert classes == ["bleeding", "non_bleeding"]


def test_labels_validation_collects_violations():
    bad = {
        "classes": ["a"],
        "labels": [
            {"image_id": 1, "class": 0, "note": "hm"},
            {"image_id": 1, "class": 0},
            {"image_id": 2, "class": 5},
            {"image_id": None, "class": 0},
        ],
    }
    messages = "\n".join(v.message for v in validate_labels_file(bad))
    assert "unknown key" in messages
    assert "duplicate image id" in messages
    assert "out of range" in messages
    assert "image_id must be" in messages


def test_load_labels_raises_on_bad_file(tmp_path):
    path = tmp_path / "labels.json"
    path.write_text('{"labels": [{"image_id": 1, "class": -1}]}')
    with pytest.raises(ValidationError):
        load_labels(path)
