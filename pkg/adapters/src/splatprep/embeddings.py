"""Per-(object, frame) crop embeddings from consolidated masks."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .backends import HashEmbedder, load_image
from .interchange import load_tracked_masks, save_embeddings
from .manifest import AdapterManifest

log = logging.getLogger(__name__)


def crop_masked(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Bounding-box crop with non-mask pixels zeroed."""
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    crop = image[r0:r1, c0:c1].copy()
    crop[~mask[r0:r1, c0:c1]] = 0.0
    return crop


def run_embeddings(image_paths: list, masks_dir, manifest: AdapterManifest, out_path) -> dict:
    """Embed every object's masked crop in every frame it appears in."""
    embedder = HashEmbedder(dimension=manifest.embedding_dimension)
    _, maps = load_tracked_masks(masks_dir)
    images = {frame: load_image(p) for frame, p in enumerate(image_paths)}
    records = []
    skipped = 0
    for (frame, _code), id_map in sorted(maps.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        if frame not in images:
            continue
        for oid in np.unique(id_map):
            if oid == 0:
                continue
            mask = id_map == oid
            if not mask.any():
                skipped += 1
                log.warning("object %d frame %d: zero-area mask, skipped", oid, frame)
                continue
            vec = embedder.embed_image(crop_masked(images[frame], mask))
            records.append((int(oid), int(frame), vec))
    # one record per (object, frame): granularities share globally unique ids
    dedup = {}
    for oid, frame, vec in records:
        dedup[(oid, frame)] = vec
    final = [(oid, frame, vec) for (oid, frame), vec in sorted(dedup.items())]
    save_embeddings(out_path, manifest.embedding_dimension, final)
    return {"records": len(final), "skipped": skipped,
            "dimension": manifest.embedding_dimension}
