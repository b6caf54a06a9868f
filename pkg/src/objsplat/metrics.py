"""Evaluation quantities: mIoU, object recall rate, duplicate count, PSNR."""

from __future__ import annotations

import logging
import math

import numpy as np

from .scene import BACKGROUND_ID, GranularityLevel, TrackedMasks

log = logging.getLogger(__name__)


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    inter = np.logical_and(pred, gt).sum()
    union = np.logical_or(pred, gt).sum()
    return float(inter) / float(union) if union else 1.0


def miou(pred_masks: dict[int, np.ndarray], gt_masks: dict[int, np.ndarray]) -> float:
    """Mean per-class IoU; classes absent from both sides are skipped."""
    total = 0.0
    counted = 0
    for cls in sorted(set(pred_masks) | set(gt_masks)):
        p = pred_masks.get(cls)
        g = gt_masks.get(cls)
        p_any = p is not None and bool(np.asarray(p).any())
        g_any = g is not None and bool(np.asarray(g).any())
        if not p_any and not g_any:
            continue
        shape = (p if p is not None else g).shape
        p = np.asarray(p, dtype=bool) if p is not None else np.zeros(shape, bool)
        g = np.asarray(g, dtype=bool) if g is not None else np.zeros(shape, bool)
        total += iou(p, g)
        counted += 1
    if counted == 0:
        raise ValueError("no classes to evaluate")
    return total / counted


def orr(tracked_per_frame: list[int], gt_per_frame: list[int]) -> float:
    """Mean over labeled frames of (tracked objects / ground-truth objects)."""
    if len(tracked_per_frame) != len(gt_per_frame):
        raise ValueError("frame count mismatch")
    if not gt_per_frame:
        raise ValueError("need at least one labeled frame")
    terms = []
    for i, (tr, gt) in enumerate(zip(tracked_per_frame, gt_per_frame)):
        if gt == 0:
            log.warning("frame %d has zero ground-truth objects; skipped", i)
            continue
        terms.append(tr / gt)
    if not terms:
        raise ValueError("every labeled frame had zero ground-truth objects")
    return float(np.mean(terms))


def duplicate_count(track_to_gt: dict[int, int | None]) -> int:
    """Number of redundant tracks: sum over GT objects of (tracks - 1)."""
    counts: dict[int, int] = {}
    for gt in track_to_gt.values():
        if gt is None:
            continue
        counts[gt] = counts.get(gt, 0) + 1
    return sum(max(0, c - 1) for c in counts.values())


def psnr(rendered: np.ndarray, target: np.ndarray) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; +inf when identical."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


# ---------------------------------------------------------------- tracking helpers

def assign_tracks_to_gt(tracked: TrackedMasks, level: GranularityLevel,
                        gt_masks: dict[int, dict[int, np.ndarray]],
                        min_iou: float = 0.5) -> dict[int, int | None]:
    """Map each track to the GT object it overlaps most, frame-majority voted.

    ``gt_masks`` is {frame: {gt_object_id: bool mask}}.
    """
    votes: dict[int, dict[int, int]] = {}
    for frame, per_obj in sorted(gt_masks.items()):
        id_map = tracked.get_map(frame, level)
        for tid in np.unique(id_map):
            if tid == BACKGROUND_ID:
                continue
            tmask = id_map == tid
            best_gt, best_iou = None, 0.0
            for gid, gmask in sorted(per_obj.items()):
                value = iou(tmask, gmask)
                if value > best_iou:
                    best_gt, best_iou = gid, value
            if best_gt is not None and best_iou >= min_iou:
                votes.setdefault(int(tid), {}).setdefault(best_gt, 0)
                votes[int(tid)][best_gt] += 1
    assignment: dict[int, int | None] = {}
    for tid, tally in sorted(votes.items()):
        best = sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        assignment[tid] = best
    return assignment


def tracked_object_counts(tracked: TrackedMasks, level: GranularityLevel,
                          gt_masks: dict[int, dict[int, np.ndarray]],
                          min_iou: float = 0.5) -> tuple[list[int], list[int]]:
    """Per labeled frame: how many GT objects have a matching track."""
    tracked_counts, gt_counts = [], []
    for frame, per_obj in sorted(gt_masks.items()):
        id_map = tracked.get_map(frame, level)
        hit = 0
        for gid, gmask in sorted(per_obj.items()):
            found = False
            for tid in np.unique(id_map):
                if tid != BACKGROUND_ID and iou(id_map == tid, gmask) >= min_iou:
                    found = True
                    break
            hit += int(found)
        tracked_counts.append(hit)
        gt_counts.append(len(per_obj))
    return tracked_counts, gt_counts
