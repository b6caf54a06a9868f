"""Staged per-object reconstruction.

Each iteration renders the full image for the photometric loss, then renders
a few sampled objects per active granularity and penalizes them against their
masked ground truth. Granularities come online coarsest-last: small objects
first, then middle, then large, because the finer structures sit inside the
coarser ones. Densification and pruning never move a Gaussian between object
sets, and a persistence floor keeps every set alive. Near the end of
training, object masks that disagree badly with the reconstructed object are
flagged partial and dropped from supervision and embedding averaging.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .render import FAST_CULL_SIGMA, DeformationField, project, render, render_object
from .scene import (BACKGROUND_ID, GaussianStore, GranularityLevel,
                    LEVELS_FINE_TO_COARSE, SceneModel)

log = logging.getLogger(__name__)

_PARAM_NAMES = ("means", "rotations", "log_scales", "opacities", "colors")


@dataclass
class TrainConfig:
    iterations: int = 20000
    lambda_r: float = 0.2
    objects_per_level: int = 3
    stage_boundaries: tuple = (5000, 10000)
    schedule_order: str = "small_first"  # "large_first" flips the stage schedule
    partial_filter_fraction: float = 0.25
    partial_filter_iou: float = 0.30
    enable_partial_filter: bool = True
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_deform: float = 1e-4
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-15
    densify_from: int = 500
    densify_until_fraction: float = 0.5
    densify_interval: int = 100
    densify_grad_threshold: float = 2e-4
    prune_opacity: float = 5e-3
    persistence_floor: int = 10
    percent_dense: float = 0.01
    psnr_interval: int = 250
    seed: int = 0
    dynamic: bool = False
    deform_hidden_layers: int = 6
    deform_width: int = 128
    deform_l_pos: int = 10
    deform_l_time: int = 6
    deform_in_object_loss: bool = True

    def __post_init__(self):
        s1, s2 = self.stage_boundaries
        if not (0 <= s1 <= s2):
            raise ValueError("stage boundaries must be ascending")
        if self.iterations > 0 and s2 >= self.iterations:
            raise ValueError("stage boundaries must lie below the iteration count")
        if not (0.0 <= self.lambda_r <= 1.0):
            raise ValueError("lambda_r must lie in [0, 1]")
        for name in ("partial_filter_iou", "prune_opacity"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "stage_boundaries" in kwargs:
            kwargs["stage_boundaries"] = tuple(kwargs["stage_boundaries"])
        if "adam_betas" in kwargs:
            kwargs["adam_betas"] = tuple(kwargs["adam_betas"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["stage_boundaries"] = list(self.stage_boundaries)
        d["adam_betas"] = list(self.adam_betas)
        return d

    def partial_filter_start(self) -> int:
        return self.iterations - int(round(self.partial_filter_fraction * self.iterations))


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite loss {value} at iteration {iteration}")
        self.iteration = iteration


# --------------------------------------------------------------------------- losses

def _gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float32) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - size // 2
    g = torch.exp(-(coords ** 2) / (2 * sigma * sigma))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(img_a: torch.Tensor, img_b: torch.Tensor, window_size: int = 11,
         sigma: float = 1.5) -> torch.Tensor:
    """Mean SSIM over pixels and channels, 11x11 Gaussian window, zero padding."""
    a = img_a.permute(2, 0, 1).unsqueeze(0)
    b = img_b.permute(2, 0, 1).unsqueeze(0)
    ch = a.shape[1]
    win = _gaussian_window(window_size, sigma, dtype=a.dtype).expand(ch, 1, window_size, window_size)
    pad = window_size // 2
    mu_a = F.conv2d(a, win, padding=pad, groups=ch)
    mu_b = F.conv2d(b, win, padding=pad, groups=ch)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = F.conv2d(a * a, win, padding=pad, groups=ch) - mu_aa
    var_b = F.conv2d(b * b, win, padding=pad, groups=ch) - mu_bb
    cov = F.conv2d(a * b, win, padding=pad, groups=ch) - mu_ab
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    score = ((2 * mu_ab + c1) * (2 * cov + c2)) / ((mu_aa + mu_bb + c1) * (var_a + var_b + c2))
    return score.mean()


def render_loss(rendered: torch.Tensor, target: torch.Tensor, lambda_r: float) -> torch.Tensor:
    """(1 - lambda_r) * L1 + lambda_r * (1 - SSIM) / 2."""
    if rendered.shape != target.shape:
        raise ValueError(f"image shapes differ: {tuple(rendered.shape)} vs {tuple(target.shape)}")
    l1 = (rendered - target).abs().mean()
    dssim = (1.0 - ssim(rendered, target)) / 2.0
    return (1.0 - lambda_r) * l1 + lambda_r * dssim


def object_loss(object_render: torch.Tensor, target: torch.Tensor,
                mask: np.ndarray) -> torch.Tensor:
    """L1 between the mask-gated ground truth and the object render."""
    m = torch.as_tensor(np.asarray(mask, dtype=bool), dtype=object_render.dtype)
    masked = target * m[..., None]
    return (masked - object_render).abs().mean()


def active_levels(iteration: int, config: TrainConfig) -> list[GranularityLevel]:
    """Granularities whose object loss is on at this iteration.

    Stages are left-closed: [0, s1) first stage, [s1, s2) second, rest third.
    """
    s1, s2 = config.stage_boundaries
    stage = 1 if iteration < s1 else (2 if iteration < s2 else 3)
    if config.schedule_order == "large_first":
        order = [GranularityLevel.LARGE, GranularityLevel.MIDDLE, GranularityLevel.SMALL]
    else:
        order = [GranularityLevel.SMALL, GranularityLevel.MIDDLE, GranularityLevel.LARGE]
    return order[:stage]


def staged_object_loss(iteration: int, losses_per_level: dict, config: TrainConfig):
    """Sum of per-level means over the levels active at this iteration."""
    total = None
    for level in active_levels(iteration, config):
        terms = losses_per_level.get(level, [])
        if not terms:
            continue
        mean = sum(terms) / len(terms)
        total = mean if total is None else total + mean
    return total


def sample_objects(rng: np.random.Generator, ids_per_level: dict, m: int,
                   levels: list[GranularityLevel]) -> dict:
    """Uniform sample without replacement of up to m object ids per level."""
    out = {}
    for level in levels:
        ids = ids_per_level.get(level, [])
        if not ids:
            out[level] = []
        elif len(ids) <= m:
            out[level] = list(ids)
        else:
            out[level] = [int(v) for v in rng.choice(np.asarray(ids), size=m, replace=False)]
    return out


# --------------------------------------------------------------------------- trainer

class Trainer:
    """Owns the optimizer, densification statistics and the loop state."""

    def __init__(self, scene: SceneModel, config: TrainConfig,
                 images: dict[int, np.ndarray]):
        self.scene = scene
        self.config = config
        self.images = {int(k): torch.as_tensor(np.asarray(v), dtype=scene.gaussians.dtype)
                       for k, v in images.items()}
        self.rng = np.random.default_rng(config.seed)

        store = scene.gaussians
        for name in _PARAM_NAMES:
            setattr(store, name, torch.nn.Parameter(getattr(store, name).detach().clone()))
        if config.dynamic and scene.deformation is None:
            scene.deformation = DeformationField(
                hidden_layers=config.deform_hidden_layers, width=config.deform_width,
                l_pos=config.deform_l_pos, l_time=config.deform_l_time, seed=config.seed)
        if scene.deformation is not None:
            scene.deformation.to(store.dtype)

        groups = [
            {"params": [store.means], "lr": config.lr_position, "name": "means"},
            {"params": [store.rotations], "lr": config.lr_rotation, "name": "rotations"},
            {"params": [store.log_scales], "lr": config.lr_scale, "name": "log_scales"},
            {"params": [store.opacities], "lr": config.lr_opacity, "name": "opacities"},
            {"params": [store.colors], "lr": config.lr_color, "name": "colors"},
        ]
        if scene.deformation is not None:
            groups.append({"params": list(scene.deformation.parameters()),
                           "lr": config.lr_deform, "name": "deform"})
        self.optimizer = torch.optim.Adam(groups, betas=config.adam_betas, eps=config.adam_eps)
        self._reset_densify_stats()
        self.metrics: list[dict] = []

    # -- densification bookkeeping

    def _reset_densify_stats(self):
        n = len(self.scene.gaussians)
        self.grad_accum = torch.zeros(n)
        self.grad_count = torch.zeros(n)

    def _record_view_gradients(self, splats):
        if splats.mean2d.grad is None:
            return
        norms = splats.mean2d.grad.detach().norm(dim=1).to(self.grad_accum.dtype)
        src = splats.source_index
        self.grad_accum.index_add_(0, src, norms)
        self.grad_count.index_add_(0, src, torch.ones_like(norms))

    def _rewrite_param(self, name: str, keep: torch.Tensor, extra=None):
        """Keep a row subset of one parameter, optionally appending new rows.

        Adam moments follow the same row selection; appended rows start with
        zero moments.
        """
        store = self.scene.gaussians
        old = getattr(store, name)
        for group in self.optimizer.param_groups:
            if group["name"] != name:
                continue
            values = old.detach()[keep]
            if extra is not None:
                values = torch.cat([values, extra], dim=0)
            state = self.optimizer.state.pop(old, None)
            new = torch.nn.Parameter(values)
            if state is not None and "exp_avg" in state:
                for key in ("exp_avg", "exp_avg_sq"):
                    kept = state[key][keep]
                    if extra is not None:
                        kept = torch.cat([kept, torch.zeros_like(extra)], dim=0)
                    state[key] = kept
                self.optimizer.state[new] = state
            group["params"] = [new]
            setattr(store, name, new)
            return
        raise KeyError(name)

    def densify_and_prune(self):
        """Clone/split high-gradient Gaussians within their sets, then prune.

        Children copy the parent's id triple verbatim. Pruning skips a
        candidate whenever removing it would push any of its three sets (or
        the background set) below the persistence floor.
        """
        cfg = self.config
        store = self.scene.gaussians
        n = len(store)
        avg = self.grad_accum / torch.clamp(self.grad_count, min=1.0)
        high = avg > cfg.densify_grad_threshold
        extent = store.scene_extent()
        max_scale = store.activated_scales().detach().max(dim=1).values
        clone_mask = high & (max_scale <= cfg.percent_dense * extent)
        split_mask = high & (max_scale > cfg.percent_dense * extent)

        means = store.means.detach()
        rotations = store.rotations.detach()
        log_scales = store.log_scales.detach()
        opacities = store.opacities.detach()
        colors = store.colors.detach()
        ids = store.object_ids

        new_parts = {name: [] for name in _PARAM_NAMES}
        new_ids = []

        if bool(clone_mask.any()):
            idx = torch.nonzero(clone_mask, as_tuple=False).reshape(-1)
            new_parts["means"].append(means[idx])
            new_parts["rotations"].append(rotations[idx])
            new_parts["log_scales"].append(log_scales[idx])
            new_parts["opacities"].append(opacities[idx])
            new_parts["colors"].append(colors[idx])
            new_ids.append(ids[idx])

        if bool(split_mask.any()):
            idx = torch.nonzero(split_mask, as_tuple=False).reshape(-1)
            g = torch.Generator().manual_seed(int(self.config.seed * 1_000_003 + self.iteration))
            from .render import quat_to_rotmat
            for _ in range(2):
                eps = torch.randn(len(idx), 3, generator=g, dtype=means.dtype)
                local = eps * torch.exp(log_scales[idx])
                offset = (quat_to_rotmat(rotations[idx] / rotations[idx].norm(dim=1, keepdim=True))
                          @ local.unsqueeze(-1)).squeeze(-1)
                new_parts["means"].append(means[idx] + offset)
                new_parts["rotations"].append(rotations[idx])
                new_parts["log_scales"].append(log_scales[idx] - math.log(1.6))
                new_parts["opacities"].append(opacities[idx])
                new_parts["colors"].append(colors[idx])
                new_ids.append(ids[idx])

        keep = ~split_mask  # split parents are replaced by their children
        added = sum(int(t.shape[0]) for t in new_parts["means"])

        if added:
            for name in _PARAM_NAMES:
                self._rewrite_param(name, keep, torch.cat(new_parts[name], dim=0))
            store.object_ids = torch.cat([ids[keep]] + new_ids, dim=0)
        elif bool((~keep).any()):
            for name in _PARAM_NAMES:
                self._rewrite_param(name, keep)
            store.object_ids = ids[keep]

        # prune transparent Gaussians, honoring the persistence floor
        opacity = torch.sigmoid(store.opacities.detach())
        candidates = torch.nonzero(opacity < cfg.prune_opacity, as_tuple=False).reshape(-1)
        order = candidates[torch.argsort(opacity[candidates], stable=True)]
        ids_np = store.object_ids.numpy()
        set_sizes: dict[tuple[int, int], int] = {}
        for level in GranularityLevel:
            uniq, counts = np.unique(ids_np[:, level.column], return_counts=True)
            for oid, cnt in zip(uniq, counts):
                set_sizes[(level.column, int(oid))] = int(cnt)
        drop = torch.zeros(len(store.object_ids), dtype=torch.bool)
        for gi in order.tolist():
            keys = [(level.column, int(ids_np[gi, level.column])) for level in GranularityLevel]
            if all(set_sizes[k] > cfg.persistence_floor for k in keys):
                drop[gi] = True
                for k in keys:
                    set_sizes[k] -= 1
        if bool(drop.any()):
            keep2 = ~drop
            for name in _PARAM_NAMES:
                self._rewrite_param(name, keep2)
            store.object_ids = store.object_ids[keep2]

        self._reset_densify_stats()
        self.scene.rebuild_object_sets()

    # -- the loop

    def run(self) -> list[dict]:
        cfg = self.config
        scene = self.scene
        cams = scene.cameras
        filter_start = cfg.partial_filter_start()
        densify_until = int(cfg.densify_until_fraction * cfg.iterations)

        for iteration in range(cfg.iterations):
            self.iteration = iteration
            self._set_position_lr(iteration)

            if cfg.enable_partial_filter and cfg.partial_filter_fraction > 0 \
                    and iteration == filter_start and scene.masks is not None:
                filter_partial_masks(scene, cfg.partial_filter_iou)

            cam = cams[int(self.rng.integers(len(cams)))]
            target = self.images[cam.frame_index]

            splats = project(scene.gaussians, cam, time=cam.time, deformation=scene.deformation)
            if splats.mean2d.requires_grad:
                splats.mean2d.retain_grad()
            # training trades the extreme Gaussian tails for speed
            result = render(splats, cam.width, cam.height, termination=None,
                            cull_sigma=FAST_CULL_SIGMA)
            loss_render = render_loss(result.image, target, cfg.lambda_r)

            level_losses: dict[GranularityLevel, list] = {}
            if cfg.objects_per_level > 0 and scene.masks is not None:
                levels = active_levels(iteration, cfg)
                sampled = sample_objects(self.rng, {lv: scene.foreground_ids(lv) for lv in levels},
                                         cfg.objects_per_level, levels)
                for level in levels:
                    for oid in sampled[level]:
                        if scene.masks.is_partial(cam.frame_index, level, oid):
                            continue
                        obj = render_object(scene, oid, level, cam, time=cam.time,
                                            detach_deformation=not cfg.deform_in_object_loss,
                                            termination=None, cull_sigma=FAST_CULL_SIGMA)
                        mask = scene.masks.object_mask(cam.frame_index, level, oid)
                        level_losses.setdefault(level, []).append(
                            object_loss(obj.image, target, mask))
            loss_obj = staged_object_loss(iteration, level_losses, cfg)
            loss = loss_render if loss_obj is None else loss_render + loss_obj

            if not bool(torch.isfinite(loss.detach())):
                raise TrainingDiverged(iteration, float(loss.detach()))

            self.optimizer.zero_grad(set_to_none=True)
            loss.backward()
            self._record_view_gradients(splats)
            self.optimizer.step()
            self._project_parameters()

            in_window = cfg.densify_from <= iteration <= densify_until
            if in_window and cfg.densify_interval > 0 and iteration > 0 \
                    and iteration % cfg.densify_interval == 0:
                self.densify_and_prune()

            row = {"iteration": iteration, "render_loss": float(loss_render.detach()),
                   "total_loss": float(loss.detach())}
            for level in GranularityLevel:
                terms = level_losses.get(level)
                row[f"obj_loss_{level.value}"] = \
                    float(sum(t.detach() for t in terms) / len(terms)) if terms else ""
            if cfg.psnr_interval > 0 and iteration % cfg.psnr_interval == 0:
                mse = float(((result.image.detach() - target) ** 2).mean())
                row["psnr"] = 10.0 * math.log10(1.0 / mse) if mse > 0 else float("inf")
            else:
                row["psnr"] = ""
            self.metrics.append(row)

        return self.metrics

    def _set_position_lr(self, iteration: int):
        cfg = self.config
        if cfg.iterations <= 1:
            return
        t = iteration / max(cfg.iterations - 1, 1)
        lr = cfg.lr_position * (cfg.lr_position_final / cfg.lr_position) ** t
        for group in self.optimizer.param_groups:
            if group["name"] == "means":
                group["lr"] = lr

    def _project_parameters(self):
        """Keep stored parameters inside their invariant ranges after a step."""
        store = self.scene.gaussians
        with torch.no_grad():
            norms = store.rotations.norm(dim=1, keepdim=True).clamp(min=1e-12)
            store.rotations.div_(norms)
            store.colors.clamp_(0.0, 1.0)


def filter_partial_masks(scene: SceneModel, iou_threshold: float) -> list[tuple]:
    """Flag (object, view) pairs whose mask disagrees with the 3D render.

    The object is rendered into each view, binarized at accumulated alpha
    0.5, and compared to its mask; IoU below the threshold marks the mask
    partial. Flags accumulate on the scene's TrackedMasks.
    """
    masks = scene.masks
    flagged = []
    with torch.no_grad():
        for level in LEVELS_FINE_TO_COARSE:
            for oid in scene.foreground_ids(level):
                views_total = 0
                views_flagged = 0
                for cam in scene.cameras:
                    mask = masks.object_mask(cam.frame_index, level, oid)
                    result = render_object(scene, oid, level, cam, time=cam.time)
                    binary = result.alpha_array() > 0.5
                    if not mask.any() and not binary.any():
                        continue
                    views_total += 1
                    inter = np.logical_and(mask, binary).sum()
                    union = np.logical_or(mask, binary).sum()
                    iou = float(inter) / float(union) if union else 1.0
                    if iou < iou_threshold:
                        masks.flag_partial(cam.frame_index, level, oid)
                        flagged.append((cam.frame_index, level, oid, iou))
                        views_flagged += 1
                if views_total and views_flagged == views_total:
                    log.warning("object %d@%s: every view flagged partial; embedding "
                                "association will fall back to all views", oid, level.value)
    return flagged


def train(scene: SceneModel, config: TrainConfig, images: dict[int, np.ndarray]
          ) -> tuple[SceneModel, list[dict]]:
    """Run the staged optimization; returns the trained scene and metric rows."""
    torch.manual_seed(config.seed)
    trainer = Trainer(scene, config, images)
    metrics = trainer.run()
    return scene, metrics


METRIC_COLUMNS = ("iteration", "render_loss", "obj_loss_S", "obj_loss_M", "obj_loss_L",
                  "total_loss", "psnr")


def save_metrics(path, metrics: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in metrics:
            cells = []
            for col in METRIC_COLUMNS:
                v = row.get(col, "")
                cells.append(f"{v:.10g}" if isinstance(v, float) else str(v))
            fh.write(",".join(cells) + "\n")
