"""Multi-view mask track repair.

Raw tracker output arrives as per-frame, per-granularity (track_id, mask)
lists. Tracks that begin at frame 0 are the baseline; tracks that begin at a
later detection frame are candidates seeded by a fresh segmentation of that
frame (the upstream adapter re-seeds its tracker there and emits the
continuation). Consolidation admits candidates only when the segmented-region
ratio declined and the candidate barely overlaps what is already tracked,
discards the smaller mask of heavily-overlapping pairs, and emits one
pixel-to-id map per (frame, granularity). Duplicate tracks left by occlusion
gaps are merged later, during Gaussian initialization, where geometry and
color are available.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import BACKGROUND_ID, GranularityLevel, TrackedMasks


@dataclass
class MaskPipelineConfig:
    delta_t: int = 10
    decline_threshold: float = 0.9
    overlap_threshold: float = 0.1
    multitrack_iou_threshold: float = 0.8
    enable_detection: bool = True
    enable_multitrack: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "MaskPipelineConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class RawMaskSequence:
    """Pre-repair tracker output; masks within a frame may overlap."""

    def __init__(self, width: int, height: int, frame_count: int):
        self.width = width
        self.height = height
        self.frame_count = frame_count
        # (frame, level) -> list of (track_id, bool mask)
        self.frames: dict[tuple[int, GranularityLevel], list[tuple[int, np.ndarray]]] = {}
        self.first_frame: dict[GranularityLevel, dict[int, int]] = {lv: {} for lv in GranularityLevel}

    def add(self, frame: int, level: GranularityLevel, track_id: int, mask: np.ndarray) -> None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.height, self.width):
            raise ValueError(f"frame {frame}: mask shape {mask.shape} does not match "
                             f"({self.height}, {self.width})")
        self.frames.setdefault((frame, level), []).append((int(track_id), mask))
        ff = self.first_frame[level]
        if track_id not in ff or frame < ff[track_id]:
            ff[int(track_id)] = frame

    def masks_at(self, frame: int, level: GranularityLevel) -> list[tuple[int, np.ndarray]]:
        return sorted(self.frames.get((frame, level), []), key=lambda tm: tm[0])


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0  # two empty masks agree perfectly
    return float(inter) / float(union)


def segmented_ratio(frame_masks: list[np.ndarray]) -> float:
    """Fraction of the frame covered by the union of the given masks."""
    if not frame_masks:
        raise ValueError("empty frame: no masks and no frame size")
    shape = frame_masks[0].shape
    if shape[0] == 0 or shape[1] == 0:
        raise ValueError("empty frame")
    union = np.zeros(shape, dtype=bool)
    for m in frame_masks:
        union |= m
    return float(union.sum()) / float(shape[0] * shape[1])


def _ratio_or_zero(frame_masks: list[np.ndarray], shape) -> float:
    if not frame_masks:
        return 0.0
    return segmented_ratio(frame_masks)


def detect_new_objects(prev: list[np.ndarray], cur: list[np.ndarray],
                       resegmentation: list[tuple[int, np.ndarray]],
                       decline_threshold: float, overlap_threshold: float,
                       frame_shape=None) -> list[tuple[int, np.ndarray]]:
    """Return reseg masks that look like genuinely new objects.

    Triggered only when the covered-area ratio dropped to below
    ``decline_threshold`` times the previous value (a vanished prev ratio
    forces detection on). A reseg mask is new when its best IoU against every
    currently tracked mask stays below ``overlap_threshold``.
    """
    if frame_shape is None:
        for group in (prev, cur, [m for _, m in resegmentation]):
            if group:
                frame_shape = group[0].shape
                break
    if frame_shape is None:
        return []
    prev_ratio = _ratio_or_zero(prev, frame_shape)
    cur_ratio = _ratio_or_zero(cur, frame_shape)
    if prev_ratio > 0 and cur_ratio / prev_ratio >= decline_threshold:
        return []
    new = []
    for track_id, mask in resegmentation:
        best = max((mask_iou(mask, m) for m in cur), default=0.0)
        if best < overlap_threshold:
            new.append((track_id, mask))
    return new


def resolve_multi_tracking(frame_masks: list[tuple[int, np.ndarray]],
                           iou_threshold: float) -> tuple[list[tuple[int, np.ndarray]], list[int]]:
    """Discard the smaller mask of every pair with IoU above the threshold.

    Iterates to a fixed point, handling the highest-IoU pair first (ties:
    smaller combined area first, then ids). Returns surviving masks and the
    removed track ids.
    """
    masks = list(frame_masks)
    removed: list[int] = []
    while True:
        worst = None
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                iou = mask_iou(masks[i][1], masks[j][1])
                if iou > iou_threshold:
                    area = int(masks[i][1].sum() + masks[j][1].sum())
                    key = (-iou, area, masks[i][0], masks[j][0])
                    if worst is None or key < worst[0]:
                        worst = (key, i, j)
        if worst is None:
            return masks, removed
        _, i, j = worst
        ai, aj = int(masks[i][1].sum()), int(masks[j][1].sum())
        # equal sizes: drop the younger (larger) track id
        drop = i if (ai, -masks[i][0]) < (aj, -masks[j][0]) else j
        removed.append(masks[drop][0])
        masks.pop(drop)


def _paint_id_map(masks: list[tuple[int, np.ndarray]], height: int, width: int) -> np.ndarray:
    """Rasterize masks to one id per pixel; smaller masks win residual overlap."""
    id_map = np.zeros((height, width), dtype=np.uint16)
    for oid, mask in sorted(masks, key=lambda om: (-int(om[1].sum()), om[0])):
        id_map[mask] = oid
    return id_map


def consolidate(raw: RawMaskSequence, config: MaskPipelineConfig) -> TrackedMasks:
    """Run the full repair pipeline and emit per-frame id maps.

    Lost-track duplicates are intentionally left in place here; merging them
    needs Gaussian geometry and is done during initialization.
    """
    tracked = TrackedMasks(raw.width, raw.height, raw.frame_count)
    next_id = 1
    # raw track id -> consolidated id, per level
    admitted: dict[GranularityLevel, dict[int, int]] = {lv: {} for lv in GranularityLevel}
    terminated: dict[GranularityLevel, set[int]] = {lv: set() for lv in GranularityLevel}
    prev_ratio: dict[GranularityLevel, dict[int, float]] = {lv: {} for lv in GranularityLevel}

    for level in GranularityLevel:
        for raw_id, first in sorted(raw.first_frame[level].items()):
            if first == 0:
                admitted[level][raw_id] = next_id
                tracked.source_tracks[level][next_id] = raw_id
                next_id += 1

    for frame in range(raw.frame_count):
        for level in GranularityLevel:
            adm = admitted[level]
            dead = terminated[level]
            current = [(raw_id, mask) for raw_id, mask in raw.masks_at(frame, level)
                       if raw_id in adm and raw_id not in dead]
            if config.enable_multitrack:
                current, removed = resolve_multi_tracking(current, config.multitrack_iou_threshold)
                dead.update(removed)

            is_detection = (config.enable_detection and frame > 0
                            and config.delta_t > 0 and frame % config.delta_t == 0)
            if is_detection:
                candidates = [(raw_id, mask) for raw_id, mask in raw.masks_at(frame, level)
                              if raw_id not in adm and raw_id not in dead
                              and raw.first_frame[level][raw_id] == frame]
                prev = prev_ratio[level].get(frame - config.delta_t, 0.0)
                cur_masks = [m for _, m in current]
                new = _detect_with_ratios(prev, cur_masks, candidates, config,
                                          (raw.height, raw.width))
                for raw_id, mask in sorted(new, key=lambda tm: tm[0]):
                    adm[raw_id] = next_id
                    tracked.source_tracks[level][next_id] = raw_id
                    next_id += 1
                    current.append((raw_id, mask))

            consolidated = [(adm[raw_id], mask) for raw_id, mask in current]
            for cid, _ in consolidated:
                tracked.record_first_seen(level, cid, frame)
            tracked.set_map(frame, level, _paint_id_map(consolidated, raw.height, raw.width))
            prev_ratio[level][frame] = _ratio_or_zero([m for _, m in current],
                                                      (raw.height, raw.width))
    return tracked


def _detect_with_ratios(prev_ratio_value: float, cur_masks, candidates,
                        config: MaskPipelineConfig, shape):
    """detect_new_objects driven by a remembered previous-frame ratio."""
    cur_ratio = _ratio_or_zero(cur_masks, shape)
    if prev_ratio_value > 0 and cur_ratio / prev_ratio_value >= config.decline_threshold:
        return []
    return [(tid, mask) for tid, mask in candidates
            if max((mask_iou(mask, m) for m in cur_masks), default=0.0) < config.overlap_threshold]


# --------------------------------------------------------------------------- file formats

def _idmap_name(level: GranularityLevel, frame: int, suffix: str = "png") -> str:
    return f"g{level.value}_f{frame:05d}.{suffix}"


def save_id_map_png(path, id_map: np.ndarray) -> None:
    Image.fromarray(id_map.astype(np.uint16)).save(path)


def load_id_map_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.uint16)


def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major run lengths alternating zeros/ones, starting with zeros."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return []
    changes = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], height: int, width: int) -> np.ndarray:
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != height * width:
        raise ValueError(f"RLE lengths sum to {pos}, expected {height * width}")
    return flat.reshape(height, width)


def save_raw_masks(directory, raw: RawMaskSequence, delta_t: int = 10) -> None:
    """Write a raw sequence as per-frame RLE JSON plus an index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {
        "format": "rle-json",
        "width": raw.width, "height": raw.height, "frame_count": raw.frame_count,
        "delta_t": delta_t,
        "granularities": [lv.value for lv in GranularityLevel],
        "tracks": {lv.value: {str(tid): {"first_frame": ff}
                              for tid, ff in sorted(raw.first_frame[lv].items())}
                   for lv in GranularityLevel},
    }
    with open(directory / "index.json", "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    for (frame, level), masks in sorted(raw.frames.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        payload = {"masks": [{"track_id": tid, "rle": rle_encode(mask)}
                             for tid, mask in sorted(masks, key=lambda tm: tm[0])]}
        with open(directory / _idmap_name(level, frame, "json"), "w") as fh:
            json.dump(payload, fh)


def load_raw_masks(directory) -> tuple[RawMaskSequence, dict]:
    directory = Path(directory)
    with open(directory / "index.json") as fh:
        index = json.load(fh)
    raw = RawMaskSequence(index["width"], index["height"], index["frame_count"])
    fmt = index.get("format", "rle-json")
    for frame in range(raw.frame_count):
        for code in index.get("granularities", ["L", "M", "S"]):
            level = GranularityLevel.from_code(code)
            if fmt == "rle-json":
                path = directory / _idmap_name(level, frame, "json")
                if not path.exists():
                    continue
                with open(path) as fh:
                    payload = json.load(fh)
                for rec in payload["masks"]:
                    raw.add(frame, level, int(rec["track_id"]),
                            rle_decode(rec["rle"], raw.height, raw.width))
            elif fmt == "idmap-png":
                path = directory / _idmap_name(level, frame, "png")
                if not path.exists():
                    continue
                id_map = load_id_map_png(path)
                if id_map.shape != (raw.height, raw.width):
                    raise ValueError(f"{path}: resolution mismatch")
                for tid in np.unique(id_map):
                    if tid != BACKGROUND_ID:
                        raw.add(frame, level, int(tid), id_map == tid)
            else:
                raise ValueError(f"unknown raw mask format {fmt!r}")
    return raw, index


def save_tracked_masks(directory, tracked: TrackedMasks) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for (frame, level), id_map in sorted(tracked.id_maps.items(),
                                         key=lambda kv: (kv[0][0], kv[0][1].value)):
        save_id_map_png(directory / _idmap_name(level, frame), id_map)
    meta = {
        "width": tracked.width, "height": tracked.height, "frame_count": tracked.frame_count,
        "first_seen": {lv.value: {str(k): v for k, v in sorted(tracked.first_seen[lv].items())}
                       for lv in GranularityLevel},
        "merges": {lv.value: {str(k): v for k, v in sorted(tracked.merges[lv].items())}
                   for lv in GranularityLevel},
        "partial": sorted([f, lv.value, oid] for f, lv, oid in tracked.partial),
        "source_tracks": {lv.value: {str(k): v for k, v in sorted(tracked.source_tracks[lv].items())}
                          for lv in GranularityLevel},
    }
    with open(directory / "tracks.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def load_tracked_masks(directory) -> TrackedMasks:
    directory = Path(directory)
    with open(directory / "tracks.json") as fh:
        meta = json.load(fh)
    tracked = TrackedMasks(meta["width"], meta["height"], meta["frame_count"])
    for frame in range(tracked.frame_count):
        for level in GranularityLevel:
            path = directory / _idmap_name(level, frame)
            if path.exists():
                id_map = load_id_map_png(path)
                if id_map.shape != (tracked.height, tracked.width):
                    raise ValueError(f"{path}: resolution mismatch")
                tracked.set_map(frame, level, id_map)
    for code, seen in meta["first_seen"].items():
        lv = GranularityLevel.from_code(code)
        for oid, frame in seen.items():
            tracked.first_seen[lv][int(oid)] = int(frame)
    for code, fwd in meta["merges"].items():
        lv = GranularityLevel.from_code(code)
        for old, new in fwd.items():
            tracked.merges[lv][int(old)] = int(new)
    for frame, code, oid in meta.get("partial", []):
        tracked.partial.add((int(frame), GranularityLevel.from_code(code), int(oid)))
    for code, src in meta.get("source_tracks", {}).items():
        lv = GranularityLevel.from_code(code)
        for cid, raw_id in src.items():
            tracked.source_tracks[lv][int(cid)] = int(raw_id)
    return tracked


def validate_mask_dir(directory) -> list[str]:
    """Schema check for a raw mask directory (used by adapter tests)."""
    directory = Path(directory)
    problems: list[str] = []
    if not (directory / "index.json").exists():
        return ["missing index.json"]
    try:
        raw, index = load_raw_masks(directory)
    except Exception as exc:  # noqa: BLE001 - diagnostic surface
        return [f"unreadable raw masks: {exc}"]
    for lv in GranularityLevel:
        declared = {int(t) for t in index.get("tracks", {}).get(lv.value, {})}
        seen = set(raw.first_frame[lv])
        for tid in sorted(seen - declared):
            problems.append(f"track {tid}@{lv.value} present in frames but not in index")
        for tid in sorted(declared - seen):
            problems.append(f"track {tid}@{lv.value} declared in index but never appears")
    if raw.frame_count <= 0:
        problems.append("frame_count must be positive")
    return problems
