"""Object-specific Gaussian initialization.

Imported points get one object id per granularity by projecting their centers
into every view and reading the consolidated masks (majority vote). Tracks
that duplicate one another with disjoint lifetimes are merged through the
geometric-appearance distance, objects the sparse cloud missed are filled
with randomly sampled Gaussians inside the back-projection of their masks,
and a background set covers the unsegmented remainder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial import cKDTree

from .scene import (BACKGROUND_ID, Camera, GaussianStore, GranularityLevel,
                    LEVELS_FINE_TO_COARSE, ObjectSet, SceneModel, TrackedMasks)

DEFAULT_OPACITY_RAW = math.log(0.1 / 0.9)  # sigmoid^-1(0.1)


@dataclass
class InitConfig:
    lambda_d: float = 0.5
    merge_threshold: float = 0.1
    n_random_per_missing: int = 1000
    n_background: int = 5000
    near_plane: float = 0.01
    seed: int = 0
    enable_merge: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "InitConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _knn_log_scales(positions: np.ndarray) -> np.ndarray:
    """Isotropic log-scales from the mean distance to the 3 nearest points."""
    n = positions.shape[0]
    if n < 4:
        dist = np.full(n, 0.05)
    else:
        tree = cKDTree(positions)
        d, _ = tree.query(positions, k=4)
        dist = np.clip(d[:, 1:].mean(axis=1), 1e-7, None)
    return np.log(dist)[:, None].repeat(3, axis=1)


def _vote_ids(positions: np.ndarray, cameras: list[Camera], masks: TrackedMasks,
              near_plane: float, force: dict | None = None) -> np.ndarray:
    """Majority object id per point per granularity from mask lookups.

    ``force`` optionally pins one level to a fixed id (used when sampling
    Gaussians for a known missing object).
    """
    n = positions.shape[0]
    votes: dict[GranularityLevel, list[dict[int, int]]] = {
        lv: [dict() for _ in range(n)] for lv in GranularityLevel}
    for cam in cameras:
        pix, z = cam.project_points(positions)
        valid = (z > near_plane) & (pix[:, 0] >= 0) & (pix[:, 0] < cam.width) \
            & (pix[:, 1] >= 0) & (pix[:, 1] < cam.height)
        if not valid.any():
            continue
        cols = np.floor(pix[valid, 0]).astype(int)
        rows = np.floor(pix[valid, 1]).astype(int)
        vidx = np.nonzero(valid)[0]
        for level in GranularityLevel:
            id_map = masks.get_map(cam.frame_index, level)
            ids = id_map[rows, cols]
            per_point = votes[level]
            for pi, oid in zip(vidx, ids):
                tally = per_point[pi]
                tally[int(oid)] = tally.get(int(oid), 0) + 1

    # total mask area per id, for tie-breaking
    areas: dict[GranularityLevel, dict[int, int]] = {lv: {} for lv in GranularityLevel}
    for (frame, level), id_map in masks.id_maps.items():
        uniq, counts = np.unique(id_map, return_counts=True)
        for oid, cnt in zip(uniq, counts):
            areas[level][int(oid)] = areas[level].get(int(oid), 0) + int(cnt)

    object_ids = np.zeros((n, 3), dtype=np.int64)
    for level in GranularityLevel:
        col = level.column
        if force and level in force:
            object_ids[:, col] = force[level]
            continue
        level_areas = areas[level]
        for pi in range(n):
            tally = votes[level][pi]
            if not tally:
                object_ids[pi, col] = BACKGROUND_ID
                continue
            top = max(tally.values())
            tied = sorted(oid for oid, cnt in tally.items() if cnt == top)
            if len(tied) == 1:
                object_ids[pi, col] = tied[0]
                continue
            by_area = sorted(tied, key=lambda oid: (-level_areas.get(oid, 0), oid))
            if len(by_area) > 1 and level_areas.get(by_area[0], 0) == level_areas.get(by_area[1], 0):
                object_ids[pi, col] = BACKGROUND_ID
            else:
                object_ids[pi, col] = by_area[0]
    return object_ids


def repair_hierarchy(store: GaussianStore) -> int:
    """Force each small set to one middle/large parent, each middle to one large.

    Returns the number of rewritten id entries.
    """
    ids = store.object_ids.numpy()
    changed = 0
    for level, parents in ((GranularityLevel.SMALL, (GranularityLevel.MIDDLE, GranularityLevel.LARGE)),
                           (GranularityLevel.MIDDLE, (GranularityLevel.LARGE,))):
        col = level.column
        for oid in np.unique(ids[:, col]):
            if oid == BACKGROUND_ID:
                continue
            members = np.nonzero(ids[:, col] == oid)[0]
            for parent in parents:
                pcol = parent.column
                counts = np.bincount(ids[members, pcol])
                majority = int(counts.argmax())
                off = members[ids[members, pcol] != majority]
                ids[off, pcol] = majority
                changed += len(off)
    store.object_ids = torch.as_tensor(ids, dtype=torch.int64)
    return changed


def assign_object_ids(positions: np.ndarray, colors: np.ndarray, cameras: list[Camera],
                      masks: TrackedMasks, config: InitConfig | None = None) -> GaussianStore:
    """Label an imported point cloud and build the initial Gaussian store."""
    if not cameras:
        raise ValueError("no cameras")
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] == 0:
        raise ValueError("empty point cloud")
    config = config or InitConfig()
    object_ids = _vote_ids(positions, cameras, masks, config.near_plane)
    n = positions.shape[0]
    store = GaussianStore.from_arrays(
        means=positions,
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        log_scales=_knn_log_scales(positions),
        opacities=np.full(n, DEFAULT_OPACITY_RAW),
        colors=np.clip(colors, 0.0, 1.0),
        object_ids=object_ids,
    )
    repair_hierarchy(store)
    return store


def geometric_appearance_distance(store: GaussianStore, set_a: ObjectSet, set_b: ObjectSet,
                                  lambda_d: float = 0.5) -> float:
    """Weighted sum of mean-center distance and mean-color distance."""
    if len(set_a.gaussian_indices) == 0 or len(set_b.gaussian_indices) == 0:
        raise ValueError("geometric-appearance distance of an empty set")
    means = store.means.detach().numpy()
    colors = store.colors.detach().numpy()
    ca = means[set_a.gaussian_indices].mean(axis=0)
    cb = means[set_b.gaussian_indices].mean(axis=0)
    col_a = colors[set_a.gaussian_indices].mean(axis=0)
    col_b = colors[set_b.gaussian_indices].mean(axis=0)
    return float(lambda_d * np.linalg.norm(ca - cb) + (1.0 - lambda_d) * np.linalg.norm(col_a - col_b))


def _frame_range(masks: TrackedMasks, level: GranularityLevel, oid: int):
    frames = masks.frames_with_object(level, oid)
    if not frames:
        return None
    return frames[0], frames[-1]


def merge_lost_tracks(store: GaussianStore, masks: TrackedMasks,
                      lambda_d: float = 0.5, merge_threshold: float = 0.1) -> list[dict]:
    """Merge same-granularity tracks with disjoint lifetimes and near-zero
    geometric-appearance distance; the older track id survives.

    The geometric term is evaluated in normalized scene units (bounding-box
    diagonal scaled to 1) so the 0..1 color term is commensurable.
    """
    merges: list[dict] = []
    means = store.means.detach().numpy()
    diag = float(np.linalg.norm(means.max(axis=0) - means.min(axis=0))) if len(store) else 1.0
    diag = max(diag, 1e-9)

    scaled = GaussianStore(store.means / diag, store.rotations, store.log_scales,
                           store.opacities, store.colors, store.object_ids)

    for level in LEVELS_FINE_TO_COARSE:
        while True:
            ids_col = store.object_ids.numpy()[:, level.column]
            live = sorted(oid for oid in np.unique(ids_col) if oid != BACKGROUND_ID)
            ranges = {}
            sets = {}
            for oid in live:
                rng = _frame_range(masks, level, int(oid))
                if rng is None:
                    continue
                ranges[int(oid)] = rng
                idx = np.nonzero(ids_col == oid)[0]
                sets[int(oid)] = ObjectSet(int(oid), level, idx.astype(np.int64))
            candidates = []
            oids = sorted(ranges)
            for i, a in enumerate(oids):
                for b in oids[i + 1:]:
                    if ranges[a][1] < ranges[b][0] or ranges[b][1] < ranges[a][0]:
                        if len(sets[a].gaussian_indices) and len(sets[b].gaussian_indices):
                            d = geometric_appearance_distance(scaled, sets[a], sets[b], lambda_d)
                            if d < merge_threshold:
                                candidates.append((d, a, b))
            if not candidates:
                break
            candidates.sort(key=lambda c: (c[0], c[1], c[2]))
            d, a, b = candidates[0]
            first_a = masks.first_seen[level].get(a, ranges[a][0])
            first_b = masks.first_seen[level].get(b, ranges[b][0])
            older, newer = (a, b) if (first_a, a) <= (first_b, b) else (b, a)
            ids = store.object_ids.numpy()
            ids[ids[:, level.column] == newer, level.column] = older
            store.object_ids = torch.as_tensor(ids, dtype=torch.int64)
            scaled.object_ids = store.object_ids
            masks.apply_merge(level, newer, older)
            merges.append({"granularity": level.value, "from": int(newer),
                           "into": int(older), "distance": float(d)})
    repair_hierarchy(store)
    return merges


def _append(store: GaussianStore, means, colors, object_ids, log_scales=None) -> GaussianStore:
    n = len(means)
    if n == 0:
        return store
    if log_scales is None:
        log_scales = _knn_log_scales(np.asarray(means))
    extra = GaussianStore.from_arrays(
        means=means, rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        log_scales=log_scales, opacities=np.full(n, DEFAULT_OPACITY_RAW),
        colors=colors, object_ids=object_ids, dtype=store.dtype,
    )
    return GaussianStore(*(torch.cat([a, b], dim=0)
                           for a, b in zip(store.tensors(), extra.tensors())))


def init_missing_and_background(store: GaussianStore, masks: TrackedMasks,
                                cameras: list[Camera], config: InitConfig,
                                images: dict[int, np.ndarray] | None = None
                                ) -> tuple[GaussianStore, dict]:
    """Give every maskless object a random Gaussian set and add background fill."""
    rng = np.random.default_rng(config.seed)
    report = {"missing_objects": [], "fallbacks": [], "background_count": config.n_background,
              "per_object_counts": {}}
    lo, hi = store.bounding_box()
    span = np.maximum(hi - lo, 1e-6)

    for level in LEVELS_FINE_TO_COARSE:
        ids_col = store.object_ids.numpy()[:, level.column]
        owned = set(int(v) for v in np.unique(ids_col))
        for oid in masks.object_ids(level):
            oid = masks.resolve_id(level, oid)
            if oid == BACKGROUND_ID or oid in owned:
                continue
            cams = [c for c in cameras if masks.object_mask(c.frame_index, level, oid).any()]
            accepted = _sample_in_mask_frustum(rng, lo, span, cams, masks, level, oid,
                                               config, report)
            color = _mean_mask_color(images, cams, masks, level, oid)
            colors = np.tile(color, (len(accepted), 1))
            forced_ids = _vote_ids(accepted, cameras, masks, config.near_plane,
                                   force={level: oid})
            scale = np.log(max(float(span.max()) * 0.02, 1e-6))
            store = _append(store, accepted, colors, forced_ids,
                            log_scales=np.full((len(accepted), 3), scale))
            owned.add(oid)
            report["missing_objects"].append({"granularity": level.value, "object_id": int(oid),
                                              "count": int(len(accepted))})

    if config.n_background > 0:
        bg = lo + rng.random((config.n_background, 3)) * span
        bg_ids = np.zeros((config.n_background, 3), dtype=np.int64)
        bg_colors = np.full((config.n_background, 3), 0.5)
        scale = np.log(max(float(span.max()) * 0.02, 1e-6))
        store = _append(store, bg, bg_colors, bg_ids,
                        log_scales=np.full((config.n_background, 3), scale))

    repair_hierarchy(store)
    for level in GranularityLevel:
        ids_col = store.object_ids.numpy()[:, level.column]
        uniq, counts = np.unique(ids_col, return_counts=True)
        report["per_object_counts"][level.value] = {str(int(o)): int(c)
                                                    for o, c in zip(uniq, counts)}
    return store, report


def _sample_in_mask_frustum(rng, lo, span, cams, masks, level, oid, config, report):
    """Rejection-sample positions whose projection hits the object's masks."""
    target = config.n_random_per_missing
    accepted: list[np.ndarray] = []
    for test in ("mask", "bbox"):
        attempts = 0
        accepted = []
        while len(accepted) < target and attempts < 200:
            batch = lo + rng.random((max(target * 4, 256), 3)) * span
            keep = np.ones(len(batch), dtype=bool)
            for cam in cams:
                pix, z = cam.project_points(batch)
                inside = (z > config.near_plane) & (pix[:, 0] >= 0) & (pix[:, 0] < cam.width) \
                    & (pix[:, 1] >= 0) & (pix[:, 1] < cam.height)
                mask = masks.object_mask(cam.frame_index, level, oid)
                hit = np.zeros(len(batch), dtype=bool)
                if inside.any():
                    cols = np.floor(pix[inside, 0]).astype(int)
                    rows = np.floor(pix[inside, 1]).astype(int)
                    if test == "mask":
                        hit[np.nonzero(inside)[0]] = mask[rows, cols]
                    else:
                        rr, cc = np.nonzero(mask)
                        if len(rr):
                            hit[np.nonzero(inside)[0]] = ((rows >= rr.min()) & (rows <= rr.max())
                                                          & (cols >= cc.min()) & (cols <= cc.max()))
                keep &= hit
            accepted.extend(batch[keep])
            attempts += 1
        if len(accepted) >= target:
            if test == "bbox":
                report["fallbacks"].append({"granularity": level.value, "object_id": int(oid),
                                            "mode": "mask-bbox"})
            return np.asarray(accepted[:target])
    # empty back-projected region: fall back to the scene bounding box
    report["fallbacks"].append({"granularity": level.value, "object_id": int(oid),
                                "mode": "scene-bbox"})
    return lo + rng.random((target, 3)) * span


def _mean_mask_color(images, cams, masks, level, oid) -> np.ndarray:
    if images:
        total = np.zeros(3)
        count = 0
        for cam in cams:
            img = images.get(cam.frame_index)
            if img is None:
                continue
            mask = masks.object_mask(cam.frame_index, level, oid)
            if mask.any():
                total += img[mask].sum(axis=0)
                count += int(mask.sum())
        if count:
            return np.clip(total / count, 0.0, 1.0)
    return np.full(3, 0.5)


def initialize_scene(positions, colors, cameras, masks: TrackedMasks, config: InitConfig,
                     images=None) -> tuple[SceneModel, dict]:
    """Full initialization: label, merge lost tracks, fill gaps, build the scene.

    The merge runs twice: once on the labeled cloud, and once more after gap
    filling, because a lost track whose re-detection owned no imported points
    only becomes comparable once it has randomly initialized Gaussians.
    """
    store = assign_object_ids(positions, colors, cameras, masks, config)
    merges = merge_lost_tracks(store, masks, config.lambda_d, config.merge_threshold) \
        if config.enable_merge else []
    store, report = init_missing_and_background(store, masks, cameras, config, images=images)
    if config.enable_merge:
        merges += merge_lost_tracks(store, masks, config.lambda_d, config.merge_threshold)
    report["merges"] = merges
    scene = SceneModel(store, cameras, masks=masks, rng_seed=config.seed)
    return scene, report
