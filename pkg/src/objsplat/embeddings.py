"""Per-object embedding association and open-vocabulary querying.

Every object owns exactly one embedding: the normalized mean of its per-view
crop embeddings over views whose mask was not flagged partial. Queries rank
objects by cosine similarity against a query vector supplied by the caller
(precomputed text embedding or a mock provider); no neural model runs here.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from . import fileio, ply
from .scene import (BACKGROUND_ID, GaussianStore, GranularityLevel, ObjectSet,
                    SceneModel)

log = logging.getLogger(__name__)


class EmbeddingTable:
    """Unit vectors per (object_id, frame), plus a text-query cache."""

    def __init__(self, dimension: int = 512):
        self.dimension = dimension
        self.records: dict[tuple[int, int], np.ndarray] = {}
        self.text_cache: dict[str, np.ndarray] = {}

    def add(self, object_id: int, frame: int, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dimension,):
            raise ValueError(f"vector shape {vec.shape} != ({self.dimension},)")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-5:
            raise ValueError(f"vector for object {object_id} frame {frame} is not unit "
                             f"(norm {norm:.6f})")
        self.records[(int(object_id), int(frame))] = vec

    def frames_for(self, object_id: int) -> list[int]:
        return sorted(frame for oid, frame in self.records if oid == object_id)

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        dimension, records = fileio.load_embeddings(path)
        table = cls(dimension)
        for object_id, frame, vec in records:
            table.add(object_id, frame, vec)
        return table

    def save(self, path) -> None:
        records = [(oid, frame, vec) for (oid, frame), vec in sorted(self.records.items())]
        fileio.save_embeddings(path, self.dimension, records)


def hash_unit_vector(key: str, dimension: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector from a string key."""
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dimension).astype(np.float32)
    return v / np.linalg.norm(v)


class MockEmbeddingProvider:
    """Hash-to-unit-vector provider; texts and crops map to stable vectors."""

    def __init__(self, dimension: int = 512):
        self.dimension = dimension

    def embed_text(self, text: str) -> np.ndarray:
        return hash_unit_vector("text:" + text, self.dimension)


class FileEmbeddingProvider:
    """Reads adapter-produced per-(object, frame) embeddings from disk."""

    def __init__(self, path):
        self.table = EmbeddingTable.load(path)
        self.dimension = self.table.dimension


def associate(object_id: int, table: EmbeddingTable, masks, granularity: GranularityLevel
              ) -> np.ndarray:
    """Mean of the object's per-view embeddings over non-partial views.

    Falls back to all views (with a warning) when every view is partial.
    """
    frames = table.frames_for(object_id)
    if not frames:
        raise ValueError(f"object {object_id} has no views")
    survivors = [f for f in frames
                 if masks is None or not masks.is_partial(f, granularity, object_id)]
    if not survivors:
        log.warning("object %d@%s: all views partial, falling back to all views",
                    object_id, granularity.value)
        survivors = frames
    mean = np.mean([table.records[(object_id, f)] for f in survivors], axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0:
        raise ValueError(f"object {object_id}: per-view embeddings cancel out")
    return (mean / norm).astype(np.float32)


def associate_all(scene: SceneModel, table: EmbeddingTable) -> None:
    """Attach one embedding to every foreground set that has view records."""
    for level in GranularityLevel:
        for oid in scene.foreground_ids(level):
            if table.frames_for(oid):
                scene.object_sets[level][oid].embedding = associate(
                    oid, table, scene.masks, level)


@dataclass
class QueryMatch:
    object_id: int
    granularity: GranularityLevel
    score: float
    gaussian_indices: np.ndarray


@dataclass
class QueryResult:
    matches: list[QueryMatch]

    @property
    def best(self) -> QueryMatch:
        return self.matches[0]


def query(text_embedding: np.ndarray, granularity: Optional[GranularityLevel],
          scene: SceneModel) -> QueryResult:
    """Rank objects by cosine similarity to the query embedding.

    ``granularity=None`` searches all three levels and ranks globally.
    """
    q = np.asarray(text_embedding, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValueError("query embedding is zero")
    q = q / qn
    levels = [granularity] if granularity is not None else list(GranularityLevel)
    matches = []
    for level in levels:
        for oid in scene.foreground_ids(level):
            oset = scene.object_sets[level][oid]
            if oset.embedding is None:
                continue
            e = np.asarray(oset.embedding, dtype=np.float64)
            score = float(np.dot(q, e / np.linalg.norm(e)))
            matches.append(QueryMatch(oid, level, score, oset.gaussian_indices))
    if not matches:
        raise ValueError("no objects with embeddings at the requested granularity")
    matches.sort(key=lambda m: (-m.score, m.granularity.value, m.object_id))
    return QueryResult(matches)


# --------------------------------------------------------------------------- export

_EXPORT_COLUMNS = (
    ("x", "f8"), ("y", "f8"), ("z", "f8"),
    ("red", "f8"), ("green", "f8"), ("blue", "f8"),
    ("scale_0", "f8"), ("scale_1", "f8"), ("scale_2", "f8"),
    ("rot_0", "f8"), ("rot_1", "f8"), ("rot_2", "f8"), ("rot_3", "f8"),
    ("opacity", "f8"),
    ("obj_large", "u2"), ("obj_middle", "u2"), ("obj_small", "u2"),
)


def export_object(scene: SceneModel, object_id: int, granularity: GranularityLevel,
                  path) -> int:
    """Write one object's Gaussians as a double-precision PLY; returns count."""
    oset = scene.object_set(object_id, granularity)
    sub = scene.gaussians.select(oset.gaussian_indices)
    values = {
        "x": sub.means[:, 0], "y": sub.means[:, 1], "z": sub.means[:, 2],
        "red": sub.colors[:, 0], "green": sub.colors[:, 1], "blue": sub.colors[:, 2],
        "scale_0": sub.log_scales[:, 0], "scale_1": sub.log_scales[:, 1],
        "scale_2": sub.log_scales[:, 2],
        "rot_0": sub.rotations[:, 0], "rot_1": sub.rotations[:, 1],
        "rot_2": sub.rotations[:, 2], "rot_3": sub.rotations[:, 3],
        "opacity": sub.opacities,
        "obj_large": sub.object_ids[:, 0], "obj_middle": sub.object_ids[:, 1],
        "obj_small": sub.object_ids[:, 2],
    }
    ply.write_ply(path, [(name, code, np.asarray(values[name].detach() if torch.is_tensor(values[name]) else values[name]))
                         for name, code in _EXPORT_COLUMNS])
    return len(sub)


def import_gaussians(path, dtype=torch.float32) -> GaussianStore:
    """Re-import a Gaussian PLY written by export_object."""
    data = ply.read_ply(path)
    required = [name for name, _ in _EXPORT_COLUMNS]
    missing = [name for name in required if name not in data]
    if missing:
        raise ValueError(f"{path}: not a Gaussian export, missing {missing}")
    return GaussianStore.from_arrays(
        means=np.stack([data["x"], data["y"], data["z"]], axis=1),
        rotations=np.stack([data[f"rot_{i}"] for i in range(4)], axis=1),
        log_scales=np.stack([data[f"scale_{i}"] for i in range(3)], axis=1),
        opacities=data["opacity"],
        colors=np.stack([data["red"], data["green"], data["blue"]], axis=1),
        object_ids=np.stack([data["obj_large"], data["obj_middle"], data["obj_small"]],
                            axis=1).astype(np.int64),
        dtype=dtype,
    )
