"""Deterministic synthetic fixtures for tests and the acceptance suite.

Three generators:

* ``nested``   - a static 3-blob scene with a nested hierarchy (three small
  objects inside two middle objects inside one large object) plus a backdrop
  wall. Emits ground-truth images and visibility masks rendered by our own
  rasterizer, a jittered point cloud, raw/consolidated masks, one-hot
  embeddings and prompts.
* ``dynamic``  - one blob translating over time in front of a wall, with
  held-out time steps for generalization checks.
* ``tracking`` - a scripted 20-frame mask sequence with one late-appearing
  object, one occlusion gap and one grid-prompt duplicate, with hand labels.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

from . import fileio
from .masks import (MaskPipelineConfig, RawMaskSequence, consolidate,
                    save_raw_masks, save_tracked_masks)
from .ply import write_point_cloud
from .render import SplatBatch, project, render
from .scene import (BACKGROUND_ID, Camera, GaussianStore, GranularityLevel,
                    look_at_camera)

OPACITY_RAW = 2.2  # sigmoid -> 0.90


# --------------------------------------------------------------------------- pieces

def _blob(rng, center, radius, count, color, ids):
    """Gaussian cluster approximating a solid colored ball."""
    pts = rng.normal(0.0, radius * 0.45, (count, 3))
    pts = pts[np.linalg.norm(pts, axis=1) < radius] + np.asarray(center)
    while len(pts) < count:
        extra = rng.normal(0.0, radius * 0.45, (count, 3))
        extra = extra[np.linalg.norm(extra, axis=1) < radius] + np.asarray(center)
        pts = np.concatenate([pts, extra])[:count]
    colors = np.clip(np.asarray(color) + rng.normal(0, 0.02, (count, 3)), 0.0, 1.0)
    scales = np.full((count, 3), math.log(radius * 0.38))
    return pts, colors, scales, np.tile(ids, (count, 1))


def _wall(rng, z, half_extent, grid, base=0.45):
    xs = np.linspace(-half_extent, half_extent, grid)
    ys = np.linspace(-half_extent, half_extent, grid)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.reshape(-1), gy.reshape(-1), np.full(gx.size, z)], axis=1)
    pts += rng.normal(0, 0.01, pts.shape)
    shade = base + 0.25 * np.sin(3.0 * pts[:, 0:1]) * np.cos(2.0 * pts[:, 1:2])
    colors = np.clip(np.concatenate([shade, shade * 0.95, shade * 1.05], axis=1), 0.0, 1.0)
    step = 2 * half_extent / (grid - 1)
    scales = np.full((len(pts), 3), math.log(step * 0.75))
    ids = np.zeros((len(pts), 3), dtype=np.int64)
    return pts, colors, scales, ids


def _assemble(parts, dtype=torch.float32) -> GaussianStore:
    pts = np.concatenate([p[0] for p in parts])
    colors = np.concatenate([p[1] for p in parts])
    scales = np.concatenate([p[2] for p in parts])
    ids = np.concatenate([p[3] for p in parts]).astype(np.int64)
    n = len(pts)
    return GaussianStore.from_arrays(
        means=pts, rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)), log_scales=scales,
        opacities=np.full(n, OPACITY_RAW), colors=colors, object_ids=ids, dtype=dtype)


def arc_cameras(count, radius=3.2, yaw_range=40.0, pitches=(8.0, -10.0),
                width=64, height=64, fx=62.0, start_index=0, times=None):
    """Cameras on an arc looking at the origin, +z toward the scene."""
    cams = []
    per_ring = count // len(pitches)
    idx = start_index
    for pitch in pitches:
        yaws = np.linspace(-yaw_range, yaw_range, per_ring)
        for yaw in yaws:
            ya, pa = math.radians(yaw), math.radians(pitch)
            pos = np.array([radius * math.sin(ya) * math.cos(pa),
                            radius * math.sin(pa),
                            -radius * math.cos(ya) * math.cos(pa)])
            t = 0.0 if times is None else times[idx - start_index]
            cams.append(look_at_camera(pos, [0, 0, 0], fx=fx, fy=fx, width=width,
                                       height=height, frame_index=idx, time=t))
            idx += 1
    return cams


def composite_group_weights(store: GaussianStore, camera: Camera, groups: np.ndarray,
                            n_groups: int, offsets: np.ndarray | None = None) -> np.ndarray:
    """Occlusion-aware per-pixel blend weight of each Gaussian group.

    Runs the regular compositor with one-hot group indicators in place of
    colors, so weight g at a pixel is the total alpha-blended contribution of
    group g there.
    """
    means = store.means if offsets is None else store.means + torch.as_tensor(
        offsets, dtype=store.dtype)
    shifted = GaussianStore(means, store.rotations, store.log_scales, store.opacities,
                            store.colors, store.object_ids)
    splats = project(shifted, camera)
    indicator = torch.zeros(len(store), n_groups, dtype=store.dtype)
    indicator[torch.arange(len(store)), torch.as_tensor(groups, dtype=torch.int64)] = 1.0
    recolored = SplatBatch(splats.mean2d, splats.cov2d, splats.depth,
                           indicator[splats.source_index], splats.opacity,
                           splats.source_index)
    return render(recolored, camera.width, camera.height).image_array()


def ground_truth_id_maps(store: GaussianStore, camera: Camera, small_ids: list[int],
                         parents: dict[int, tuple[int, int]], offsets=None,
                         min_weight: float = 0.3) -> dict[GranularityLevel, np.ndarray]:
    """Visible-region masks per granularity, as an upstream tracker would see."""
    ids_small = store.object_ids.numpy()[:, GranularityLevel.SMALL.column]
    group_of = {oid: gi for gi, oid in enumerate(small_ids)}
    groups = np.array([group_of.get(int(v), len(small_ids)) for v in ids_small])
    weights = composite_group_weights(store, camera, groups, len(small_ids) + 1, offsets)
    winner = weights.argmax(axis=2)
    wmax = weights.max(axis=2)
    small_map = np.zeros(winner.shape, dtype=np.uint16)
    for gi, oid in enumerate(small_ids):
        small_map[(winner == gi) & (wmax > min_weight)] = oid
    mid_map = np.zeros_like(small_map)
    large_map = np.zeros_like(small_map)
    for oid in small_ids:
        mid, large = parents[oid]
        mid_map[small_map == oid] = mid
        large_map[small_map == oid] = large
    return {GranularityLevel.SMALL: small_map, GranularityLevel.MIDDLE: mid_map,
            GranularityLevel.LARGE: large_map}


# --------------------------------------------------------------------------- nested

NESTED_SMALL_IDS = [4, 5, 6]
NESTED_PARENTS = {4: (2, 1), 5: (2, 1), 6: (3, 1)}


IMAGE_SIZE = 48
FOCAL = 47.0


def build_nested_store(seed: int = 7) -> GaussianStore:
    # the two small blobs inside middle object 2 share one color and nearly
    # touch: organizing their boundary is exactly what early fine-level
    # supervision is for
    rng = np.random.default_rng(seed)
    red = (0.82, 0.20, 0.16)
    blue = (0.18, 0.32, 0.80)
    parts = [
        _blob(rng, (-0.45, 0.28, 0.0), 0.24, 75, red, (1, 2, 4)),
        _blob(rng, (-0.45, -0.28, 0.0), 0.24, 75, red, (1, 2, 5)),
        _blob(rng, (0.55, 0.00, 0.0), 0.27, 85, blue, (1, 3, 6)),
        _wall(rng, 0.95, 1.6, 20),
    ]
    return _assemble(parts)


def _render_gt_images(store, cameras, outdir: Path, offsets_fn=None):
    img_dir = outdir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    images = {}
    with torch.no_grad():
        for cam in cameras:
            offsets = offsets_fn(cam) if offsets_fn else None
            means = store.means if offsets is None else store.means + torch.as_tensor(
                offsets, dtype=store.dtype)
            shifted = GaussianStore(means, store.rotations, store.log_scales,
                                    store.opacities, store.colors, store.object_ids)
            result = render(project(shifted, cam), cam.width, cam.height)
            img = result.image_array()
            images[cam.frame_index] = img
            fileio.save_image_raw(img_dir / f"img_f{cam.frame_index:05d}.npy", img)
            fileio.save_image_png(img_dir / f"img_f{cam.frame_index:05d}.png", img)
    return images


def _raw_from_gt_maps(gt_maps: dict[int, dict[GranularityLevel, np.ndarray]],
                      width: int, height: int) -> RawMaskSequence:
    """One raw track per object from frame 0, ids chosen to survive renumbering."""
    raw = RawMaskSequence(width, height, len(gt_maps))
    for frame, per_level in sorted(gt_maps.items()):
        for level, id_map in per_level.items():
            for oid in np.unique(id_map):
                if oid != BACKGROUND_ID:
                    raw.add(frame, level, int(oid), id_map == oid)
    return raw


def _one_hot_embeddings(outdir: Path, object_ids: list[int], frames: list[int],
                        dimension: int = 16):
    records = []
    for oid in object_ids:
        vec = np.zeros(dimension, dtype=np.float32)
        vec[oid % dimension] = 1.0
        for frame in frames:
            records.append((oid, frame, vec))
    fileio.save_embeddings(outdir / "embeddings.bin", dimension, records)
    return dimension


def _nested_prompts(outdir: Path, dimension: int = 16):
    prompts = []
    level_of = {1: "L", 2: "M", 3: "M", 4: "S", 5: "S", 6: "S"}
    for oid, code in sorted(level_of.items()):
        vec = np.zeros(dimension, dtype=np.float32)
        vec[oid % dimension] = 1.0
        prompts.append({"id": f"object-{oid}", "embedding": vec.tolist(),
                        "expected_object": oid, "granularity": code})
    fileio.write_json(outdir / "prompts.json", {"prompts": prompts})


def generate_nested(outdir, seed: int = 7, corrupt_fraction: float = 0.0,
                    iterations: int = 3000) -> dict:
    """Emit the nested static fixture; returns a summary dict."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed + 1)
    store = build_nested_store(seed)
    cameras = arc_cameras(24, width=IMAGE_SIZE, height=IMAGE_SIZE, fx=FOCAL)
    fileio.save_cameras(outdir / "cameras.json", cameras)

    images = _render_gt_images(store, cameras, outdir)
    gt_maps = {cam.frame_index: ground_truth_id_maps(store, cam, NESTED_SMALL_IDS,
                                                     NESTED_PARENTS)
               for cam in cameras}

    gt_dir = outdir / "gt_masks"
    gt_dir.mkdir(exist_ok=True)
    from .masks import save_id_map_png
    for frame, per_level in sorted(gt_maps.items()):
        for level, id_map in per_level.items():
            save_id_map_png(gt_dir / f"g{level.value}_f{frame:05d}.png", id_map)

    corrupted = []
    if corrupt_fraction > 0:
        n_bad = int(round(corrupt_fraction * len(cameras)))
        bad_frames = sorted(rng.choice([c.frame_index for c in cameras], size=n_bad,
                                       replace=False).tolist())
        target = NESTED_SMALL_IDS[0]
        mid_parent, large_parent = NESTED_PARENTS[target]
        for frame in bad_frames:
            small = gt_maps[frame][GranularityLevel.SMALL]
            mask = small == target
            rows = np.nonzero(mask.any(axis=1))[0]
            if not len(rows):
                continue
            # one occluder covers most of the object: every granularity's mask
            # loses the same region, and the small mask keeps ~15%
            cut = rows[0] + max(1, int(0.15 * len(rows)))
            occluder = mask.copy()
            occluder[:cut, :] = False
            small[occluder] = 0
            gt_maps[frame][GranularityLevel.MIDDLE][occluder] = 0
            gt_maps[frame][GranularityLevel.LARGE][occluder] = 0
            corrupted.append({"frame": int(frame), "object_id": int(target),
                              "granularity": "S"})
            corrupted.append({"frame": int(frame), "object_id": int(mid_parent),
                              "granularity": "M"})
            corrupted.append({"frame": int(frame), "object_id": int(large_parent),
                              "granularity": "L"})
        fileio.write_json(outdir / "corruption.json", {"corrupted": corrupted})

    raw = _raw_from_gt_maps(gt_maps, IMAGE_SIZE, IMAGE_SIZE)
    save_raw_masks(outdir / "masks_raw", raw, delta_t=10)
    tracked = consolidate(raw, MaskPipelineConfig(delta_t=10))
    save_tracked_masks(outdir / "masks", tracked)

    # strong jitter on foreground points: initialization must sort out which
    # set the boundary points belong to; the wall stays nearly clean
    foreground = store.object_ids.numpy()[:, GranularityLevel.SMALL.column] != BACKGROUND_ID
    sigma = np.where(foreground[:, None], 0.085, 0.02)
    jitter = rng.normal(0, 1.0, (len(store), 3)) * sigma
    pts = store.means.numpy() + jitter
    cols = np.clip(store.colors.numpy() + rng.normal(0, 0.05, (len(store), 3)), 0, 1)
    write_point_cloud(outdir / "points.ply", pts, cols)

    dim = _one_hot_embeddings(outdir, [1, 2, 3, 4, 5, 6], [0, 5, 10, 15])
    _nested_prompts(outdir, dim)

    config = {
        "cameras": "cameras.json", "masks": "masks", "raw_masks": "masks_raw",
        "point_cloud": "points.ply", "embeddings": "embeddings.bin",
        "images": "images", "prompts": "prompts.json",
        "consolidate": {"delta_t": 10},
        "init": {"seed": seed, "n_random_per_missing": 80, "n_background": 400},
        "train": {
            "iterations": iterations, "stage_boundaries": [500, 1000],
            "objects_per_level": 1, "seed": seed, "psnr_interval": 250,
            "densify_from": 500, "densify_until_fraction": 0.5,
            "densify_interval": 100, "persistence_floor": 10,
        },
    }
    fileio.write_json(outdir / "scene_config.json", config)
    return {"cameras": len(cameras), "gaussians": len(store), "corrupted": corrupted}


# --------------------------------------------------------------------------- dynamic

DYNAMIC_VELOCITY = np.array([0.55, 0.12, 0.0])
DYNAMIC_SMALL_ID = 3
DYNAMIC_PARENTS = {3: (2, 1)}


def build_dynamic_store(seed: int = 11) -> GaussianStore:
    rng = np.random.default_rng(seed)
    parts = [
        _blob(rng, (-0.30, 0.02, 0.0), 0.26, 130, (0.85, 0.45, 0.12), (1, 2, 3)),
        _wall(rng, 0.95, 1.7, 26),
    ]
    return _assemble(parts)


def _dynamic_offsets(store: GaussianStore, time: float) -> np.ndarray:
    moving = store.object_ids.numpy()[:, GranularityLevel.SMALL.column] == DYNAMIC_SMALL_ID
    offsets = np.zeros((len(store), 3))
    offsets[moving] = DYNAMIC_VELOCITY * (time - 0.5)
    return offsets


def generate_dynamic(outdir, seed: int = 11, iterations: int = 3000) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    store = build_dynamic_store(seed)

    n_times = 20
    test_slots = [4, 9, 15]
    times = [k / (n_times - 1) for k in range(n_times)]
    train_times = [t for k, t in enumerate(times) if k not in test_slots]
    test_times = [times[k] for k in test_slots]

    def view_cameras(time_list, start_index):
        cams = []
        idx = start_index
        for t in time_list:
            for yaw, pitch in ((-16.0, 6.0), (14.0, -8.0)):
                ya, pa = math.radians(yaw), math.radians(pitch)
                pos = np.array([3.2 * math.sin(ya) * math.cos(pa), 3.2 * math.sin(pa),
                                -3.2 * math.cos(ya) * math.cos(pa)])
                cams.append(look_at_camera(pos, [0, 0, 0], fx=FOCAL, fy=FOCAL, width=IMAGE_SIZE,
                                           height=IMAGE_SIZE, frame_index=idx, time=t))
                idx += 1
        return cams

    train_cams = view_cameras(train_times, 0)
    test_cams = view_cameras(test_times, len(train_cams))
    fileio.save_cameras(outdir / "cameras.json", train_cams)
    fileio.save_cameras(outdir / "cameras_test.json", test_cams)

    offsets_fn = lambda cam: _dynamic_offsets(store, cam.time)
    _render_gt_images(store, train_cams, outdir, offsets_fn=offsets_fn)
    test_dir = outdir / "images_test"
    test_dir.mkdir(exist_ok=True)
    with torch.no_grad():
        for cam in test_cams:
            means = store.means + torch.as_tensor(offsets_fn(cam), dtype=store.dtype)
            shifted = GaussianStore(means, store.rotations, store.log_scales,
                                    store.opacities, store.colors, store.object_ids)
            img = render(project(shifted, cam), cam.width, cam.height).image_array()
            fileio.save_image_raw(test_dir / f"img_f{cam.frame_index:05d}.npy", img)

    from .masks import save_id_map_png
    gt_dir = outdir / "gt_masks"
    gt_dir.mkdir(exist_ok=True)
    gt_maps = {}
    for cam in train_cams + test_cams:
        maps = ground_truth_id_maps(store, cam, [DYNAMIC_SMALL_ID], DYNAMIC_PARENTS,
                                    offsets=offsets_fn(cam))
        gt_maps[cam.frame_index] = maps
        for level, id_map in maps.items():
            save_id_map_png(gt_dir / f"g{level.value}_f{cam.frame_index:05d}.png", id_map)

    raw = _raw_from_gt_maps({c.frame_index: gt_maps[c.frame_index] for c in train_cams},
                            IMAGE_SIZE, IMAGE_SIZE)
    save_raw_masks(outdir / "masks_raw", raw, delta_t=10)
    tracked = consolidate(raw, MaskPipelineConfig(delta_t=10))
    save_tracked_masks(outdir / "masks", tracked)

    rng = np.random.default_rng(seed + 1)
    base_offsets = _dynamic_offsets(store, 0.5)  # canonical = mid-sequence pose
    pts = store.means.numpy() + base_offsets + rng.normal(0, 0.04, (len(store), 3))
    cols = np.clip(store.colors.numpy() + rng.normal(0, 0.05, (len(store), 3)), 0, 1)
    write_point_cloud(outdir / "points.ply", pts, cols)

    dim = _one_hot_embeddings(outdir, [1, 2, DYNAMIC_SMALL_ID], [0, 6, 12], dimension=16)
    config = {
        "cameras": "cameras.json", "masks": "masks", "raw_masks": "masks_raw",
        "point_cloud": "points.ply", "embeddings": "embeddings.bin", "images": "images",
        "consolidate": {"delta_t": 10},
        "init": {"seed": seed, "n_random_per_missing": 80, "n_background": 400},
        "train": {
            "iterations": iterations, "stage_boundaries": [400, 800],
            "objects_per_level": 1, "seed": seed, "dynamic": True,
            "deform_hidden_layers": 4, "deform_width": 64,
            "deform_l_pos": 6, "deform_l_time": 4,
            "densify_from": 500, "densify_until_fraction": 0.4,
        },
    }
    fileio.write_json(outdir / "scene_config.json", config)
    return {"train_cameras": len(train_cams), "test_cameras": len(test_cams),
            "gaussians": len(store)}


# --------------------------------------------------------------------------- tracking

TRACKING_FRAMES = 20
TRACKING_DELTA_T = 5
TRACKING_IDENTITY = {10: "A", 11: "A", 12: "C", 13: "B", 14: "C"}
TRACKING_GT_FRAMES = {0: ["A", "C"], 18: ["A", "B", "C"]}

_TRACK_CLUSTERS = {
    "A": {"center": (-0.50, 0.52, 0.0), "radius": 0.20},
    "B": {"center": (-0.34, 0.44, 0.0), "radius": 0.17},  # bites into A's disk
    "C": {"center": (-0.45, -0.50, 0.0), "radius": 0.16},
}


def _tracking_cameras():
    cams = []
    for frame in range(TRACKING_FRAMES):
        yaw = 22.0 * math.sin(2.0 * math.pi * frame / 8.0)
        ya = math.radians(yaw)
        pos = np.array([3.4 * math.sin(ya), 0.25, -3.4 * math.cos(ya)])
        cams.append(look_at_camera(pos, [0, 0, 0], fx=105.0, fy=105.0, width=64, height=64,
                                   frame_index=frame))
    return cams


def _disk_mask(camera: Camera, center, world_radius, shape=(64, 64), scale=1.0):
    pix, z = camera.project_points(np.asarray(center, dtype=float)[None, :])
    if z[0] <= 0:
        return np.zeros(shape, dtype=bool)
    cx, cy = pix[0, 0], pix[0, 1]
    radius_px = scale * world_radius * camera.fx / z[0]
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    return (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= radius_px ** 2


def generate_tracking(outdir, seed: int = 5) -> dict:
    """Scripted sequence: duplicate track, occlusion gap, late arrival."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    cams = _tracking_cameras()
    fileio.save_cameras(outdir / "cameras.json", cams)

    raw = RawMaskSequence(64, 64, TRACKING_FRAMES)
    gt_presence: dict[int, dict[str, np.ndarray]] = {}
    for frame in range(TRACKING_FRAMES):
        cam = cams[frame]
        a_full = _disk_mask(cam, _TRACK_CLUSTERS["A"]["center"], _TRACK_CLUSTERS["A"]["radius"])
        b_disk = _disk_mask(cam, _TRACK_CLUSTERS["B"]["center"], _TRACK_CLUSTERS["B"]["radius"])
        c_disk = _disk_mask(cam, _TRACK_CLUSTERS["C"]["center"], _TRACK_CLUSTERS["C"]["radius"])
        # grid-prompt duplicate of A: concentric, slightly smaller (IoU ~ 0.85)
        d_disk = _disk_mask(cam, _TRACK_CLUSTERS["A"]["center"], _TRACK_CLUSTERS["A"]["radius"],
                            scale=0.92)

        b_present = frame >= 12
        a_visible = a_full & ~b_disk if b_present else a_full
        d_visible = d_disk & ~b_disk if b_present else d_disk

        frame_masks = {10: a_visible, 11: d_visible}
        if frame <= 7:
            frame_masks[12] = c_disk  # lost after an occlusion starting at frame 8
        if frame >= 15:
            frame_masks[13] = b_disk  # candidates seeded at detection frame 15
            frame_masks[14] = c_disk
        for base, mask in sorted(frame_masks.items()):
            for level, offset in ((GranularityLevel.SMALL, 0), (GranularityLevel.MIDDLE, 100),
                                  (GranularityLevel.LARGE, 200)):
                raw.add(frame, level, base + offset, mask)

        gt_presence[frame] = {"A": a_visible}
        if b_present:
            gt_presence[frame]["B"] = b_disk
        if frame <= 7 or frame >= 12:
            gt_presence[frame]["C"] = c_disk

    save_raw_masks(outdir / "masks_raw", raw, delta_t=TRACKING_DELTA_T)

    # point cloud: one gray cluster per true object plus bbox anchors
    parts = []
    for name, spec in sorted(_TRACK_CLUSTERS.items()):
        pts = rng.normal(0, spec["radius"] * 0.4, (60, 3)) + np.asarray(spec["center"])
        parts.append(pts)
    anchors = np.array([[1.2, 1.2, 0.05], [-1.2, 1.2, 0.05], [1.2, -1.2, 0.05],
                        [-1.2, -1.2, 0.05]])
    pts = np.concatenate(parts + [anchors])
    colors = np.full((len(pts), 3), 0.5)
    write_point_cloud(outdir / "points.ply", pts, colors)

    identities = {str(tid + off): name for tid, name in TRACKING_IDENTITY.items()
                  for off in (0, 100, 200)}
    fileio.write_json(outdir / "gt_tracks.json", {
        "identities": identities,
        "gt_frames": {str(k): v for k, v in TRACKING_GT_FRAMES.items()},
    })
    config = {
        "cameras": "cameras.json", "raw_masks": "masks_raw", "point_cloud": "points.ply",
        "consolidate": {"delta_t": TRACKING_DELTA_T},
        "init": {"seed": seed, "n_random_per_missing": 60, "n_background": 0},
    }
    fileio.write_json(outdir / "scene_config.json", config)
    return {"frames": TRACKING_FRAMES, "tracks": len(TRACKING_IDENTITY)}
