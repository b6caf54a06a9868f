import math

import numpy as np
import pytest

from objsplat.metrics import (assign_tracks_to_gt, duplicate_count, iou, miou, orr,
                              psnr, tracked_object_counts)


def box(h, w, r0, r1, c0, c1):
    m = np.zeros((h, w), dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


# --------------------------------------------------------------------------- miou

def test_miou_identical_masks():
    masks = {1: box(8, 8, 0, 4, 0, 4), 2: box(8, 8, 4, 8, 4, 8)}
    assert miou(masks, masks) == 1.0


def test_miou_disjoint_masks():
    pred = {1: box(8, 8, 0, 4, 0, 4)}
    gt = {1: box(8, 8, 4, 8, 4, 8)}
    assert miou(pred, gt) == 0.0


def test_miou_matches_counting_oracle():
    pred = {1: box(16, 16, 0, 8, 0, 8), 2: box(16, 16, 8, 16, 0, 8),
            3: box(16, 16, 0, 16, 8, 16)}
    gt = {1: box(16, 16, 0, 8, 0, 10), 2: box(16, 16, 9, 16, 0, 8),
          3: box(16, 16, 0, 16, 8, 12)}
    per_class = []
    for cls in (1, 2, 3):
        inter = np.logical_and(pred[cls], gt[cls]).sum()
        union = np.logical_or(pred[cls], gt[cls]).sum()
        per_class.append(inter / union)
    assert miou(pred, gt) == pytest.approx(np.mean(per_class), abs=1e-12)


def test_miou_skips_classes_absent_on_both_sides():
    pred = {1: box(8, 8, 0, 4, 0, 4), 2: np.zeros((8, 8), bool)}
    gt = {1: box(8, 8, 0, 4, 0, 4), 2: np.zeros((8, 8), bool)}
    assert miou(pred, gt) == 1.0


def test_miou_no_classes_errors():
    with pytest.raises(ValueError):
        miou({}, {})


def test_miou_symmetric_and_relabel_invariant():
    pred = {1: box(8, 8, 0, 5, 0, 5), 2: box(8, 8, 5, 8, 5, 8)}
    gt = {1: box(8, 8, 0, 4, 0, 6), 2: box(8, 8, 4, 8, 4, 8)}
    assert miou(pred, gt) == pytest.approx(miou(gt, pred), abs=1e-12)
    relabeled_pred = {10: pred[1], 20: pred[2]}
    relabeled_gt = {10: gt[1], 20: gt[2]}
    assert miou(pred, gt) == pytest.approx(miou(relabeled_pred, relabeled_gt), abs=1e-12)


# --------------------------------------------------------------------------- orr

def test_orr_all_tracked():
    assert orr([3, 4], [3, 4]) == 1.0


def test_orr_half_tracked():
    assert orr([1, 2], [2, 4]) == 0.5


def test_orr_skips_zero_gt_frames(caplog):
    import logging
    with caplog.at_level(logging.WARNING):
        value = orr([2, 0], [2, 0])
    assert value == 1.0
    assert any("zero ground-truth" in r.message for r in caplog.records)


def test_orr_requires_frames():
    with pytest.raises(ValueError):
        orr([], [])


# --------------------------------------------------------------------------- duplicates

def test_duplicate_count_one_track_per_object():
    assert duplicate_count({1: 10, 2: 11, 3: 12}) == 0


def test_duplicate_count_split_object():
    assert duplicate_count({1: 10, 2: 10, 3: 10}) == 2


def test_duplicate_count_ignores_unmatched():
    assert duplicate_count({1: 10, 2: None, 3: 10}) == 1


# --------------------------------------------------------------------------- psnr

def test_psnr_closed_form():
    a = np.zeros((10, 10, 3))
    b = np.full((10, 10, 3), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).random((8, 8, 3))
    assert psnr(a, a) == math.inf


def test_psnr_matches_direct_formula(rng):
    a = rng.random((8, 8, 3))
    b = rng.random((8, 8, 3))
    mse = float(((a - b) ** 2).mean())
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / mse), abs=1e-9)


def test_psnr_shape_mismatch_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


# --------------------------------------------------------------------------- tracking helpers

def test_assignment_and_counts_from_masks():
    from objsplat.scene import GranularityLevel, TrackedMasks
    tracked = TrackedMasks(16, 16, 2)
    id_map0 = np.zeros((16, 16), np.uint16)
    id_map0[0:6, 0:6] = 1
    id_map0[10:16, 10:16] = 2
    id_map1 = np.zeros((16, 16), np.uint16)
    id_map1[0:6, 0:6] = 1
    tracked.set_map(0, GranularityLevel.SMALL, id_map0)
    tracked.set_map(1, GranularityLevel.SMALL, id_map1)
    gt = {0: {100: box(16, 16, 0, 6, 0, 6), 200: box(16, 16, 10, 16, 10, 16)},
          1: {100: box(16, 16, 0, 6, 0, 6), 200: box(16, 16, 10, 16, 10, 16)}}
    assignment = assign_tracks_to_gt(tracked, GranularityLevel.SMALL, gt)
    assert assignment == {1: 100, 2: 200}
    tracked_counts, gt_counts = tracked_object_counts(tracked, GranularityLevel.SMALL, gt)
    assert tracked_counts == [2, 1]
    assert gt_counts == [2, 2]
    assert orr(tracked_counts, gt_counts) == pytest.approx(0.75)
