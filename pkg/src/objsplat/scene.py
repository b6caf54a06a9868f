"""Shared scene data model.

Everything downstream (mask repair, initialization, rendering, training,
querying) operates on the types defined here: a struct-of-arrays Gaussian
store where every splat carries one object ID per granularity level, pinhole
cameras, consolidated multi-view masks, and the per-object set registry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import torch

# Object id 0 means "background / unsegmented" at every granularity.
BACKGROUND_ID = 0


class GranularityLevel(Enum):
    LARGE = "L"
    MIDDLE = "M"
    SMALL = "S"

    @property
    def column(self) -> int:
        """Column of this level inside the per-Gaussian id triple."""
        return _LEVEL_COLUMNS[self]

    @property
    def order(self) -> int:
        """Containment order: SMALL < MIDDLE < LARGE."""
        return _LEVEL_ORDER[self]

    @classmethod
    def from_code(cls, code: str) -> "GranularityLevel":
        for level in cls:
            if level.value == code:
                return level
        raise ValueError(f"unknown granularity code {code!r}")


_LEVEL_COLUMNS = {GranularityLevel.LARGE: 0, GranularityLevel.MIDDLE: 1, GranularityLevel.SMALL: 2}
_LEVEL_ORDER = {GranularityLevel.SMALL: 0, GranularityLevel.MIDDLE: 1, GranularityLevel.LARGE: 2}

# Fixed iteration order everywhere (fine to coarse).
LEVELS_FINE_TO_COARSE = (GranularityLevel.SMALL, GranularityLevel.MIDDLE, GranularityLevel.LARGE)


@dataclass
class Gaussian:
    """A single splat primitive; convenience type for construction and tests.

    ``scale`` is stored in log space and ``opacity`` pre-activation; the
    renderer applies exp / sigmoid. ``object_ids`` is (large, middle, small).
    """

    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    color: np.ndarray
    object_ids: tuple[int, int, int] = (BACKGROUND_ID, BACKGROUND_ID, BACKGROUND_ID)


class GaussianStore:
    """Struct-of-arrays container for all Gaussians of a scene.

    Tensors may be plain or ``nn.Parameter`` (during training). Object ids are
    immutable after initialization except through the sanctioned lost-track
    merge, which rewrites whole sets at once.
    """

    def __init__(self, means, rotations, log_scales, opacities, colors, object_ids):
        self.means = means
        self.rotations = rotations
        self.log_scales = log_scales
        self.opacities = opacities
        self.colors = colors
        self.object_ids = object_ids

    def __len__(self) -> int:
        return int(self.means.shape[0])

    @property
    def dtype(self):
        return self.means.dtype

    @classmethod
    def empty(cls, dtype=torch.float32) -> "GaussianStore":
        z = lambda *shape: torch.zeros(*shape, dtype=dtype)
        return cls(z(0, 3), z(0, 4), z(0, 3), z(0), z(0, 3), torch.zeros(0, 3, dtype=torch.int64))

    @classmethod
    def from_arrays(cls, means, rotations, log_scales, opacities, colors, object_ids,
                    dtype=torch.float32) -> "GaussianStore":
        t = lambda a: torch.as_tensor(np.asarray(a), dtype=dtype)
        ids = torch.as_tensor(np.asarray(object_ids), dtype=torch.int64)
        return cls(t(means), t(rotations), t(log_scales), t(opacities), t(colors), ids)

    @classmethod
    def from_gaussians(cls, gaussians: list[Gaussian], dtype=torch.float32) -> "GaussianStore":
        return cls.from_arrays(
            [g.mean for g in gaussians],
            [g.rotation for g in gaussians],
            [g.scale for g in gaussians],
            [g.opacity for g in gaussians],
            [g.color for g in gaussians],
            [g.object_ids for g in gaussians],
            dtype=dtype,
        )

    def select(self, indices) -> "GaussianStore":
        idx = torch.as_tensor(np.asarray(indices), dtype=torch.int64)
        return GaussianStore(
            self.means[idx], self.rotations[idx], self.log_scales[idx],
            self.opacities[idx], self.colors[idx], self.object_ids[idx],
        )

    def detached_copy(self) -> "GaussianStore":
        return GaussianStore(*(t.detach().clone() for t in self.tensors()))

    def tensors(self):
        return (self.means, self.rotations, self.log_scales, self.opacities,
                self.colors, self.object_ids)

    def activated_opacities(self) -> torch.Tensor:
        return torch.sigmoid(self.opacities)

    def activated_scales(self) -> torch.Tensor:
        return torch.exp(self.log_scales)

    def ids_at(self, level: GranularityLevel) -> torch.Tensor:
        return self.object_ids[:, level.column]

    def indices_of(self, object_id: int, level: GranularityLevel) -> np.ndarray:
        mask = self.ids_at(level) == int(object_id)
        return torch.nonzero(mask, as_tuple=False).reshape(-1).numpy()

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.means.detach().numpy()
        return m.min(axis=0), m.max(axis=0)

    def scene_extent(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid transform.

    ``time`` in [0, 1] drives the deformation field; static scenes use 0.
    Pixel (row, col) has center (col + 0.5, row + 0.5) in projection units.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # (3,3) world-to-camera
    translation: np.ndarray  # (3,)
    frame_index: int = 0
    time: float = 0.0

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns (pixel xy, camera-space depth)."""
        cam = self.world_to_camera(points)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * cam[:, 0] / z + self.cx
            v = self.fy * cam[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": np.asarray(self.rotation).tolist(),
            "translation": np.asarray(self.translation).tolist(),
            "frame_index": self.frame_index, "time": self.time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            width=int(d["width"]), height=int(d["height"]),
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            translation=np.asarray(d["translation"], dtype=np.float64),
            frame_index=int(d.get("frame_index", 0)), time=float(d.get("time", 0.0)),
        )


def look_at_camera(position, target, up=(0.0, 1.0, 0.0), fx=60.0, fy=60.0,
                   width=64, height=64, frame_index=0, time=0.0) -> Camera:
    """Build a camera at ``position`` looking toward ``target`` (+z forward)."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(np.asarray(up, dtype=np.float64), forward)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(np.array([1.0, 0.0, 0.0]), forward)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot_cw = np.stack([right, down, forward], axis=1)  # camera-to-world columns
    rotation = rot_cw.T
    translation = -rotation @ position
    return Camera(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0, width=width, height=height,
                  rotation=rotation, translation=translation, frame_index=frame_index, time=time)


@dataclass
class ObjectSet:
    """Gaussians owned by one object at one granularity."""

    object_id: int
    granularity: GranularityLevel
    gaussian_indices: np.ndarray
    embedding: Optional[np.ndarray] = None
    parent_ids: Optional[tuple[int, int]] = None  # (middle, large) for SMALL sets


class TrackedMasks:
    """Per-frame, per-granularity pixel-to-object-id maps after track repair.

    Pixel value 0 is unsegmented. Partial flags are only ever set during a
    training run, never cleared; lost-track merges are recorded as forwarding
    entries old_id -> surviving_id.
    """

    def __init__(self, width: int, height: int, frame_count: int):
        self.width = width
        self.height = height
        self.frame_count = frame_count
        self.id_maps: dict[tuple[int, GranularityLevel], np.ndarray] = {}
        self.first_seen: dict[GranularityLevel, dict[int, int]] = {lv: {} for lv in GranularityLevel}
        self.merges: dict[GranularityLevel, dict[int, int]] = {lv: {} for lv in GranularityLevel}
        self.partial: set[tuple[int, GranularityLevel, int]] = set()
        # provenance: consolidated id -> upstream track id, per granularity
        self.source_tracks: dict[GranularityLevel, dict[int, int]] = {lv: {} for lv in GranularityLevel}

    def set_map(self, frame: int, level: GranularityLevel, id_map: np.ndarray) -> None:
        if id_map.shape != (self.height, self.width):
            raise ValueError(f"id map shape {id_map.shape} does not match "
                             f"({self.height}, {self.width})")
        self.id_maps[(frame, level)] = id_map.astype(np.uint16)

    def get_map(self, frame: int, level: GranularityLevel) -> np.ndarray:
        key = (frame, level)
        if key not in self.id_maps:
            return np.zeros((self.height, self.width), dtype=np.uint16)
        return self.id_maps[key]

    def object_mask(self, frame: int, level: GranularityLevel, object_id: int) -> np.ndarray:
        return self.get_map(frame, level) == object_id

    def object_ids(self, level: GranularityLevel) -> list[int]:
        return sorted(self.first_seen[level].keys())

    def record_first_seen(self, level: GranularityLevel, object_id: int, frame: int) -> None:
        seen = self.first_seen[level]
        if object_id not in seen:
            seen[object_id] = frame

    def resolve_id(self, level: GranularityLevel, object_id: int) -> int:
        """Follow merge forwarding to the surviving id."""
        fwd = self.merges[level]
        while object_id in fwd:
            object_id = fwd[object_id]
        return object_id

    def apply_merge(self, level: GranularityLevel, old_id: int, into_id: int) -> None:
        """Rewrite ``old_id`` to ``into_id`` in every frame and record it."""
        for (frame, lv), id_map in self.id_maps.items():
            if lv is level:
                id_map[id_map == old_id] = into_id
        self.merges[level][old_id] = into_id
        old_first = self.first_seen[level].pop(old_id, None)
        if old_first is not None:
            cur = self.first_seen[level].get(into_id, old_first)
            self.first_seen[level][into_id] = min(cur, old_first)
        # Merged-away ids keep their flags under the surviving id.
        for (frame, lv, oid) in list(self.partial):
            if lv is level and oid == old_id:
                self.partial.discard((frame, lv, oid))
                self.partial.add((frame, lv, into_id))

    def flag_partial(self, frame: int, level: GranularityLevel, object_id: int) -> None:
        self.partial.add((frame, level, object_id))

    def is_partial(self, frame: int, level: GranularityLevel, object_id: int) -> bool:
        return (frame, level, object_id) in self.partial

    def frames_with_object(self, level: GranularityLevel, object_id: int) -> list[int]:
        frames = []
        for (frame, lv), id_map in sorted(self.id_maps.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            if lv is level and bool((id_map == object_id).any()):
                frames.append(frame)
        return frames


class SceneModel:
    """Cameras + Gaussian store + object registry + optional deformation field.

    Single-writer during training; read-only snapshots may be shared across
    concurrent readers (no mutation while a snapshot is live).
    """

    def __init__(self, gaussians: GaussianStore, cameras: list[Camera],
                 masks: Optional[TrackedMasks] = None, deformation=None,
                 training_config=None, rng_seed: int = 0):
        self.gaussians = gaussians
        self.cameras = cameras
        self.masks = masks
        self.deformation = deformation
        self.training_config = training_config
        self.rng_seed = int(rng_seed)
        self.object_sets: dict[GranularityLevel, dict[int, ObjectSet]] = {}
        self.rebuild_object_sets()

    def rebuild_object_sets(self) -> None:
        """Recompute the per-granularity registry from the id columns."""
        self.object_sets = {}
        ids = self.gaussians.object_ids.numpy() if len(self.gaussians) else np.zeros((0, 3), np.int64)
        for level in GranularityLevel:
            registry: dict[int, ObjectSet] = {}
            col = ids[:, level.column]
            for oid in sorted(set(int(v) for v in np.unique(col))):
                indices = np.nonzero(col == oid)[0].astype(np.int64)
                parent = None
                if level is GranularityLevel.SMALL and oid != BACKGROUND_ID and len(indices):
                    mids = ids[indices, GranularityLevel.MIDDLE.column]
                    lids = ids[indices, GranularityLevel.LARGE.column]
                    parent = (int(np.bincount(mids).argmax()), int(np.bincount(lids).argmax()))
                registry[oid] = ObjectSet(object_id=oid, granularity=level,
                                          gaussian_indices=indices, parent_ids=parent)
            self.object_sets[level] = registry

    def object_set(self, object_id: int, level: GranularityLevel) -> ObjectSet:
        try:
            return self.object_sets[level][int(object_id)]
        except KeyError:
            raise KeyError(f"no object {object_id} at granularity {level.value}") from None

    def foreground_ids(self, level: GranularityLevel) -> list[int]:
        return sorted(oid for oid in self.object_sets.get(level, {}) if oid != BACKGROUND_ID)

    def snapshot(self) -> "SceneModel":
        snap = SceneModel(self.gaussians.detached_copy(), list(self.cameras), self.masks,
                          deformation=self.deformation, training_config=self.training_config,
                          rng_seed=self.rng_seed)
        return snap


def quaternion_norms(rotations: torch.Tensor) -> torch.Tensor:
    return torch.linalg.norm(rotations, dim=-1)


def validate_scene(scene: SceneModel) -> list[str]:
    """Check every type invariant; returns one message per violation."""
    violations: list[str] = []
    store = scene.gaussians
    n = len(store)

    if n:
        norms = quaternion_norms(store.rotations.detach()).numpy()
        bad = np.nonzero(np.abs(norms - 1.0) > 1e-6)[0]
        for i in bad[:16]:
            violations.append(f"gaussian {i}: quaternion norm {norms[i]:.6g} not within 1e-6 of 1")
        if len(bad) > 16:
            violations.append(f"... {len(bad) - 16} more quaternion norm violations")
        finite = [
            ("mean", store.means), ("scale", store.log_scales),
            ("opacity", store.opacities), ("color", store.colors),
        ]
        for name, t in finite:
            if not bool(torch.isfinite(t.detach()).all()):
                violations.append(f"gaussian store: non-finite {name} values")
        colors = store.colors.detach()
        if bool((colors < -1e-6).any()) or bool((colors > 1 + 1e-6).any()):
            violations.append("gaussian store: color outside [0, 1]")
        if bool((store.object_ids < 0).any()):
            violations.append("gaussian store: negative object id")

    for ci, cam in enumerate(scene.cameras):
        if cam.fx <= 0 or cam.fy <= 0:
            violations.append(f"camera {ci}: non-positive focal length")
        rtr = np.asarray(cam.rotation) @ np.asarray(cam.rotation).T
        if np.abs(rtr - np.eye(3)).max() > 1e-6:
            violations.append(f"camera {ci}: rotation not orthonormal within 1e-6")
        if not (0.0 <= cam.time <= 1.0):
            violations.append(f"camera {ci}: time {cam.time} outside [0, 1]")

    # Partition: each index in exactly one set per granularity (background included).
    for level in GranularityLevel:
        registry = scene.object_sets.get(level, {})
        counts = np.zeros(n, dtype=np.int64)
        for oset in registry.values():
            counts[oset.gaussian_indices] += 1
        if n and not bool((counts == 1).all()):
            over = np.nonzero(counts > 1)[0]
            missing = np.nonzero(counts == 0)[0]
            if len(over):
                violations.append(f"overlapping sets at {level.value}: indices {over[:8].tolist()}")
            if len(missing):
                violations.append(f"uncovered gaussians at {level.value}: indices {missing[:8].tolist()}")
        for oid, oset in registry.items():
            col_ids = store.object_ids.numpy()[oset.gaussian_indices, level.column] if len(oset.gaussian_indices) else np.array([])
            if len(col_ids) and not (col_ids == oid).all():
                violations.append(f"set {oid}@{level.value}: member id mismatch")

    # Hierarchy: a small set's members share one middle and one large parent.
    ids = store.object_ids.numpy() if n else np.zeros((0, 3), np.int64)
    for oid, oset in scene.object_sets.get(GranularityLevel.SMALL, {}).items():
        if oid == BACKGROUND_ID or not len(oset.gaussian_indices):
            continue
        mids = set(ids[oset.gaussian_indices, GranularityLevel.MIDDLE.column].tolist())
        lids = set(ids[oset.gaussian_indices, GranularityLevel.LARGE.column].tolist())
        if len(mids) > 1:
            violations.append(f"small set {oid}: multiple middle parents {sorted(mids)}")
        if len(lids) > 1:
            violations.append(f"small set {oid}: multiple large parents {sorted(lids)}")

    # Every mask id owns a set or is recorded as merged away.
    if scene.masks is not None:
        for level in GranularityLevel:
            registry = scene.object_sets.get(level, {})
            for oid in scene.masks.object_ids(level):
                if oid == BACKGROUND_ID:
                    continue
                resolved = scene.masks.resolve_id(level, oid)
                if resolved not in registry:
                    violations.append(f"mask object {oid}@{level.value}: no Gaussian set and no merge record")

    return violations
