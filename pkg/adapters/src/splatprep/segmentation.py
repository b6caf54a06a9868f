"""Grid-prompted segmentation plus frame-to-frame track association.

The first frame is segmented with a point grid per granularity; masks are
then carried across frames by best-IoU matching. At every detection stride an
extra fresh segmentation seeds candidate tracks for anything the existing
tracks do not cover, which is exactly what the downstream new-object detector
consumes.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .backends import GridRegionSegmenter, load_image
from .interchange import GRANULARITIES, save_raw_masks
from .manifest import AdapterManifest

log = logging.getLogger(__name__)


def _mask_iou(a, b) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / float(union)


def _associate(prev_masks: dict[int, np.ndarray], new_masks: list[np.ndarray],
               min_iou: float = 0.5):
    """Greedy best-IoU matching; returns ({track_id: mask}, [unmatched masks])."""
    pairs = []
    for tid, pmask in sorted(prev_masks.items()):
        for j, nmask in enumerate(new_masks):
            v = _mask_iou(pmask, nmask)
            if v >= min_iou:
                pairs.append((-v, tid, j))
    pairs.sort()
    matched_tracks, matched_new = set(), set()
    out = {}
    for _neg, tid, j in pairs:
        if tid in matched_tracks or j in matched_new:
            continue
        matched_tracks.add(tid)
        matched_new.add(j)
        out[tid] = new_masks[j]
    unmatched = [m for j, m in enumerate(new_masks) if j not in matched_new]
    return out, unmatched


def run_segmentation(image_paths: list, manifest: AdapterManifest, outdir) -> dict:
    """Segment and track a clip; writes raw RLE masks in pipeline format."""
    if not image_paths:
        raise ValueError("empty image list")
    segmenter = GridRegionSegmenter(color_levels=manifest.color_levels)
    images = [load_image(p) for p in image_paths]
    h, w = images[0].shape[:2]
    for i, img in enumerate(images):
        if img.shape[:2] != (h, w):
            raise ValueError(f"frame {i} resolution {img.shape[:2]} differs from ({h}, {w})")

    frames: dict = {}
    first_frames: dict = {code: {} for code in GRANULARITIES}
    next_id = 1
    for code in GRANULARITIES:
        grid = manifest.grid_densities[code]
        band = tuple(manifest.area_bands[code])
        tracks: dict[int, np.ndarray] = {}
        for tid_mask in segmenter.segment(images[0], grid, band):
            tracks[next_id] = tid_mask
            first_frames[code][next_id] = 0
            next_id += 1
        frames[(0, code)] = [(tid, m) for tid, m in sorted(tracks.items())]
        for frame in range(1, len(images)):
            fresh = segmenter.segment(images[frame], grid, band)
            carried, unmatched = _associate(tracks, fresh)
            tracks = carried
            if manifest.delta_t > 0 and frame % manifest.delta_t == 0:
                for mask in unmatched:  # candidate tracks seeded at the stride
                    tracks[next_id] = mask
                    first_frames[code][next_id] = frame
                    next_id += 1
            frames[(frame, code)] = [(tid, m) for tid, m in sorted(tracks.items())]

    outdir = Path(outdir)
    save_raw_masks(outdir, w, h, len(images), manifest.delta_t, frames, first_frames)
    track_counts = {code: len(first_frames[code]) for code in GRANULARITIES}
    log.info("segmented %d frames: %s tracks", len(images), track_counts)
    return {"frames": len(images), "tracks": track_counts}
