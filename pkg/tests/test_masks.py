import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objsplat.masks import (MaskPipelineConfig, RawMaskSequence, consolidate,
                            detect_new_objects, load_raw_masks, load_tracked_masks,
                            mask_iou, resolve_multi_tracking, rle_decode, rle_encode,
                            save_raw_masks, save_tracked_masks, segmented_ratio,
                            save_id_map_png, load_id_map_png, validate_mask_dir)
from objsplat.scene import GranularityLevel

from oracles import greedy_multitrack_reference, iou_reference, union_ratio_reference


def box(h, w, r0, r1, c0, c1):
    m = np.zeros((h, w), dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


# --------------------------------------------------------------------------- segmented_ratio

def test_segmented_ratio_full_frame():
    assert segmented_ratio([np.ones((8, 8), bool)]) == 1.0


def test_segmented_ratio_disjoint_quarters():
    a = box(8, 8, 0, 4, 0, 4)
    b = box(8, 8, 4, 8, 4, 8)
    assert segmented_ratio([a, b]) == 0.5


def test_segmented_ratio_overlapping_matches_union_oracle(rng):
    masks = [box(64, 64, 5, 40, 5, 30), box(64, 64, 20, 55, 18, 45),
             box(64, 64, 30, 50, 2, 25)]
    expected = union_ratio_reference(masks, 64, 64)
    assert segmented_ratio(masks) == pytest.approx(expected, abs=1e-12)


def test_segmented_ratio_empty_frame_errors():
    with pytest.raises(ValueError):
        segmented_ratio([])
    with pytest.raises(ValueError):
        segmented_ratio([np.zeros((0, 8), bool)])


# --------------------------------------------------------------------------- detect_new_objects

def _mask_pair():
    prev = [box(32, 32, 2, 20, 2, 30)]
    cur = [box(32, 32, 2, 12, 2, 30)]  # ratio dropped to ~0.55 of prev
    return prev, cur


def test_detect_new_objects_on_ratio_decline():
    prev, cur = _mask_pair()
    new_mask = box(32, 32, 24, 30, 4, 12)
    out = detect_new_objects(prev, cur, [(7, new_mask)], 0.9, 0.1)
    assert [tid for tid, _ in out] == [7]


def test_detect_new_objects_stable_ratio_is_noop():
    prev = [box(32, 32, 2, 20, 2, 30)]
    cur = [box(32, 32, 2, 20, 2, 29)]  # ratio 0.966 of prev, above 0.9
    out = detect_new_objects(prev, cur, [(7, box(32, 32, 24, 30, 4, 12))], 0.9, 0.1)
    assert out == []


def test_detect_new_objects_rejects_high_overlap():
    prev, cur = _mask_pair()
    overlapping = box(32, 32, 2, 12, 2, 29)  # nearly the tracked mask
    out = detect_new_objects(prev, cur, [(7, overlapping)], 0.9, 0.1)
    assert out == []


def test_detect_new_objects_forced_when_prev_empty():
    cur = [box(32, 32, 2, 20, 2, 30)]
    new_mask = box(32, 32, 24, 30, 4, 12)
    out = detect_new_objects([], cur, [(7, new_mask)], 0.9, 0.1)
    assert [tid for tid, _ in out] == [7]


# --------------------------------------------------------------------------- resolve_multi_tracking

def test_multitrack_nested_pair_drops_smaller():
    large = box(16, 16, 2, 14, 2, 14)
    small = box(16, 16, 3, 14, 3, 14)
    survivors, removed = resolve_multi_tracking([(1, small), (2, large)], 0.5)
    assert removed == [1]
    assert [tid for tid, _ in survivors] == [2]


def test_multitrack_disjoint_pair_kept():
    a = box(16, 16, 0, 6, 0, 6)
    b = box(16, 16, 10, 16, 10, 16)
    survivors, removed = resolve_multi_tracking([(1, a), (2, b)], 0.5)
    assert removed == []
    assert len(survivors) == 2


def test_multitrack_chain_matches_greedy_oracle():
    # pairwise IoUs roughly (a,b)=0.9, (b,c)=0.2, (a,c)=high via sizes
    a = box(32, 32, 2, 30, 2, 22)
    b = box(32, 32, 2, 30, 2, 24)
    c = box(32, 32, 2, 30, 18, 30)
    masks = [(1, a), (2, b), (3, c)]
    survivors, removed = resolve_multi_tracking(masks, 0.6)
    ref_survivors, ref_removed = greedy_multitrack_reference(masks, 0.6)
    assert [t for t, _ in survivors] == [t for t, _ in ref_survivors]
    assert removed == ref_removed


def test_multitrack_random_scenes_match_oracle(rng):
    for trial in range(8):
        gen = np.random.default_rng(trial)
        masks = []
        for tid in range(5):
            r0, c0 = gen.integers(0, 20, 2)
            h, w = gen.integers(4, 14, 2)
            masks.append((tid, box(32, 32, r0, r0 + h, c0, c0 + w)))
        survivors, removed = resolve_multi_tracking(masks, 0.5)
        ref_survivors, ref_removed = greedy_multitrack_reference(masks, 0.5)
        assert [t for t, _ in survivors] == [t for t, _ in ref_survivors]
        assert removed == ref_removed


# --------------------------------------------------------------------------- consolidate

def _simple_sequence(frames=6):
    raw = RawMaskSequence(32, 32, frames)
    for f in range(frames):
        for level in GranularityLevel:
            raw.add(f, level, 1, box(32, 32, 2, 12, 2, 12))
    return raw


def test_consolidate_single_static_object():
    raw = _simple_sequence()
    tracked = consolidate(raw, MaskPipelineConfig(delta_t=3))
    for level in GranularityLevel:
        ids = tracked.object_ids(level)
        assert len(ids) == 1
        assert tracked.first_seen[level][ids[0]] == 0


def test_consolidate_detects_late_object():
    raw = RawMaskSequence(32, 32, 10)
    for f in range(10):
        # the tracked object shrinks at frame 5+ (occluded by the newcomer)
        width = 26 if f < 5 else 14
        raw.add(f, GranularityLevel.SMALL, 1, box(32, 32, 2, 12, 2, width))
    for f in range(5, 10):
        raw.add(f, GranularityLevel.SMALL, 2, box(32, 32, 20, 30, 20, 30))
    tracked = consolidate(raw, MaskPipelineConfig(delta_t=5, decline_threshold=0.9,
                                                  overlap_threshold=0.1))
    ids = tracked.object_ids(GranularityLevel.SMALL)
    assert len(ids) == 2
    late = max(ids)
    assert tracked.first_seen[GranularityLevel.SMALL][late] == 5
    # appears in the id maps only from the detection frame
    assert not (tracked.get_map(4, GranularityLevel.SMALL) == late).any()
    assert (tracked.get_map(5, GranularityLevel.SMALL) == late).any()


def test_consolidate_without_detection_ignores_candidates():
    raw = RawMaskSequence(32, 32, 10)
    for f in range(10):
        width = 26 if f < 5 else 14
        raw.add(f, GranularityLevel.SMALL, 1, box(32, 32, 2, 12, 2, width))
    for f in range(5, 10):
        raw.add(f, GranularityLevel.SMALL, 2, box(32, 32, 20, 30, 20, 30))
    tracked = consolidate(raw, MaskPipelineConfig(delta_t=5, enable_detection=False))
    assert len(tracked.object_ids(GranularityLevel.SMALL)) == 1


def test_consolidate_post_iou_invariant(rng):
    raw = RawMaskSequence(32, 32, 4)
    gen = np.random.default_rng(9)
    for tid in range(6):
        r0, c0 = gen.integers(0, 18, 2)
        for f in range(4):
            raw.add(f, GranularityLevel.SMALL, tid + 1,
                    box(32, 32, r0, r0 + 12, c0, c0 + 12))
    cfg = MaskPipelineConfig(delta_t=2, multitrack_iou_threshold=0.5)
    tracked = consolidate(raw, cfg)
    for f in range(4):
        id_map = tracked.get_map(f, GranularityLevel.SMALL)
        ids = [i for i in np.unique(id_map) if i != 0]
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                assert mask_iou(id_map == a, id_map == b) <= cfg.multitrack_iou_threshold


def test_consolidate_deterministic():
    raw = _simple_sequence()
    cfg = MaskPipelineConfig(delta_t=3)
    a = consolidate(raw, cfg)
    b = consolidate(raw, cfg)
    assert a.first_seen == b.first_seen
    for key in a.id_maps:
        assert np.array_equal(a.id_maps[key], b.id_maps[key])


def test_consolidate_residual_overlap_smaller_mask_wins():
    raw = RawMaskSequence(32, 32, 1)
    big = box(32, 32, 0, 20, 0, 20)
    small = box(32, 32, 0, 8, 0, 8)  # IoU 0.16, below threshold: both survive
    raw.add(0, GranularityLevel.SMALL, 1, big)
    raw.add(0, GranularityLevel.SMALL, 2, small)
    tracked = consolidate(raw, MaskPipelineConfig(delta_t=5))
    id_map = tracked.get_map(0, GranularityLevel.SMALL)
    assert id_map[4, 4] == 2
    assert id_map[15, 15] == 1


def test_raw_sequence_rejects_mismatched_resolution():
    raw = RawMaskSequence(32, 32, 2)
    with pytest.raises(ValueError):
        raw.add(0, GranularityLevel.SMALL, 1, np.zeros((16, 16), bool))


# --------------------------------------------------------------------------- mask file formats

@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=200))
def test_rle_round_trip(bits):
    h, w = 1, len(bits)
    mask = np.array(bits, dtype=bool).reshape(h, w)
    assert np.array_equal(rle_decode(rle_encode(mask), h, w), mask)


def test_rle_decode_rejects_bad_length():
    with pytest.raises(ValueError):
        rle_decode([3, 2], 2, 4)


def test_id_map_png_round_trip(tmp_path, rng):
    id_map = rng.integers(0, 1000, (20, 30)).astype(np.uint16)
    save_id_map_png(tmp_path / "m.png", id_map)
    assert np.array_equal(load_id_map_png(tmp_path / "m.png"), id_map)


def test_raw_masks_round_trip(tmp_path):
    raw = _simple_sequence(4)
    raw.add(2, GranularityLevel.SMALL, 5, box(32, 32, 20, 30, 20, 28))
    save_raw_masks(tmp_path / "raw", raw, delta_t=2)
    loaded, index = load_raw_masks(tmp_path / "raw")
    assert index["delta_t"] == 2
    assert loaded.frame_count == raw.frame_count
    for key in raw.frames:
        got = dict((tid, m) for tid, m in loaded.masks_at(*key))
        for tid, mask in raw.frames[key]:
            assert np.array_equal(got[tid], mask)
    assert validate_mask_dir(tmp_path / "raw") == []


def test_tracked_masks_round_trip(tmp_path):
    raw = _simple_sequence(4)
    tracked = consolidate(raw, MaskPipelineConfig(delta_t=2))
    tracked.flag_partial(1, GranularityLevel.SMALL, 1)
    tracked.merges[GranularityLevel.SMALL][9] = 1
    save_tracked_masks(tmp_path / "masks", tracked)
    loaded = load_tracked_masks(tmp_path / "masks")
    assert loaded.is_partial(1, GranularityLevel.SMALL, 1)
    assert loaded.resolve_id(GranularityLevel.SMALL, 9) == 1
    assert loaded.first_seen == tracked.first_seen
    assert loaded.source_tracks == tracked.source_tracks
    for key, id_map in tracked.id_maps.items():
        assert np.array_equal(loaded.id_maps[key], id_map)


def test_validate_mask_dir_reports_missing_index(tmp_path):
    (tmp_path / "empty").mkdir()
    assert validate_mask_dir(tmp_path / "empty") == ["missing index.json"]


def test_mask_iou_reference_agreement(rng):
    for trial in range(5):
        gen = np.random.default_rng(trial + 50)
        a = gen.random((16, 16)) > 0.5
        b = gen.random((16, 16)) > 0.5
        assert mask_iou(a, b) == pytest.approx(iou_reference(a, b), abs=1e-12)
