"""Map growth and optimization.

Densification compares rendered depth against observed depth, back-projects
under-covered pixels, optionally corrects them (and the camera pose) with a
gated ICP alignment against the visible splats, and instantiates one splat
per surviving pixel. Map optimization and color refinement descend the
combined photometric/depth loss on the splat parameters, sampling keyframes
by configurable strategies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .datasets import Frame
from .errors import EmptyKeyframeSet, EmptyPointSet
from .gaussian_map import GaussianMap, IcpParams, icp_align, visible_subset, voxel_downsample
from .geometry import CameraIntrinsics, Pose, back_project_pixels
from .renderer import LossWeights, loss_torch, render, render_torch

ADAM_BETAS = (0.9, 0.999)

DEFAULT_LRS = {
    "centers": 2e-3,
    "scales": 2e-3,
    "orientations": 2e-3,
    "colors": 2.5e-2,
    "opacities": 2.5e-2,
}

MIN_SCALE = 1e-5
MIN_OPACITY = 1e-4


@dataclass(frozen=True)
class SamplingStrategy:
    """Keyframe sampling for refinement: uniform ``random``, deterministic
    ``worst_first`` (argmax loss, ties to the lowest index), or
    ``loss_weighted`` which draws proportionally to loss with probability
    ``mix_p`` and uniformly otherwise."""

    mode: str = "loss_weighted"
    mix_p: float = 0.4

    def __post_init__(self):
        if self.mode not in ("random", "worst_first", "loss_weighted"):
            raise ValueError(f"unknown sampling mode: {self.mode}")
        if not (0.0 <= self.mix_p <= 1.0):
            raise ValueError("mix_p must lie in [0, 1]")


@dataclass
class DensifyReport:
    """Outcome of one densification step. ``pose`` carries the (possibly
    ICP-corrected) camera pose the caller should keep."""

    added: int
    corrected: bool
    icp_fitness: float
    icp_error: float
    pose: Pose


@dataclass(frozen=True)
class MapperConfig:
    """Densification knobs: coverage tolerance ``tau`` for the depth
    comparison, the candidate-pixel stride, the ICP downsampling voxel, and
    whether the ICP pose/point correction is applied at all."""

    tau: float = 0.02
    pixel_stride: int = 2
    voxel: float = 0.02
    icp: IcpParams = IcpParams()
    icp_correction: bool = True
    min_overlap_points: int = 10
    splat_opacity: float = 0.5

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.pixel_stride < 1:
            raise ValueError("pixel_stride must be at least 1")


def densify(
    gmap: GaussianMap,
    frame: Frame,
    pose: Pose,
    K: CameraIntrinsics,
    cfg: MapperConfig = MapperConfig(),
) -> DensifyReport:
    """Add splats where the observed surface is closer than the rendered one
    (or not rendered at all), with an ICP-gated correction of the new points
    and the camera pose against the existing map."""
    if len(gmap) > 0:
        rendered_depth = render(gmap, pose, K).depth
    else:
        rendered_depth = np.zeros((K.height, K.width))

    s = cfg.pixel_stride
    rows, cols = np.mgrid[0:K.height:s, 0:K.width:s]
    rows = rows.ravel()
    cols = cols.ravel()
    d_gt = frame.depth[rows, cols]
    d_r = rendered_depth[rows, cols]
    valid = d_gt > 0
    need = valid & ((d_r == 0) | (d_gt < d_r - cfg.tau))
    covered = valid & (d_r > 0) & (np.abs(d_gt - d_r) <= cfg.tau)

    us = cols + 0.5
    vs = rows + 0.5

    correction: Pose | None = None
    fitness = 0.0
    error = math.inf
    new_pose = pose
    if (cfg.icp_correction and len(gmap) > 0
            and int(covered.sum()) >= cfg.min_overlap_points):
        p_o = pose.apply(back_project_pixels(
            us[covered], vs[covered], d_gt[covered], K))
        vis = visible_subset(gmap, pose, K)
        if vis.size >= 3:
            src = voxel_downsample(p_o, cfg.voxel)
            dst = voxel_downsample(gmap.centers[vis], cfg.voxel)
            try:
                result = icp_align(src, dst, cfg.icp)
            except EmptyPointSet:
                result = None
            if result is not None:
                fitness = result.fitness
                error = result.error
                if result.accepted:
                    correction = result.pose
                    new_pose = correction.compose(pose)

    added = int(need.sum())
    if added:
        p_n = pose.apply(back_project_pixels(us[need], vs[need], d_gt[need], K))
        if correction is not None:
            p_n = correction.apply(p_n)
        # One-pixel footprint: isotropic scale = depth / fx.
        scales = np.repeat((d_gt[need] / K.fx)[:, None], 3, axis=1)
        quats = np.tile([1.0, 0.0, 0.0, 0.0], (added, 1))
        colors = frame.color[rows[need], cols[need]]
        gmap.add_arrays(p_n, scales, quats, colors,
                        np.full(added, cfg.splat_opacity))

    return DensifyReport(added=added, corrected=correction is not None,
                         icp_fitness=fitness, icp_error=error, pose=new_pose)


def sample_keyframe(
    losses, strategy: SamplingStrategy, rng: np.random.Generator
) -> int:
    """Draw a keyframe index given per-keyframe losses."""
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise EmptyKeyframeSet("no keyframes to sample from")
    if np.any(losses < 0):
        raise ValueError("losses must be non-negative")
    if strategy.mode == "worst_first":
        return int(np.argmax(losses))
    if strategy.mode == "random":
        return int(rng.integers(losses.size))
    # loss_weighted: priority draw with probability mix_p, else uniform.
    if rng.random() < strategy.mix_p:
        total = losses.sum()
        if total > 0:
            return int(rng.choice(losses.size, p=losses / total))
    return int(rng.integers(losses.size))


class _SplatOptimizer:
    """Adam descent on the splat parameter arrays with the map's invariants
    (positive scales, unit quaternions, clamped colors/opacities) restored
    after every step."""

    def __init__(self, gmap: GaussianMap, keyframes, w: LossWeights,
                 trainable: tuple[str, ...], lrs: dict | None = None):
        if not keyframes:
            raise EmptyKeyframeSet("need at least one keyframe")
        if len(gmap) == 0:
            raise EmptyPointSet("cannot optimize an empty map")
        self.gmap = gmap
        self.w = w
        self.keyframes = keyframes
        lrs = {**DEFAULT_LRS, **(lrs or {})}
        self.params = {}
        for name in ("centers", "scales", "orientations", "colors",
                     "opacities"):
            t = torch.from_numpy(np.array(getattr(gmap, name), dtype=float))
            t.requires_grad_(name in trainable)
            self.params[name] = t
        self.opt = torch.optim.Adam(
            [{"params": [self.params[n]], "lr": lrs[n]} for n in trainable],
            betas=ADAM_BETAS)
        self.cameras = []
        self.targets = []
        for frame, pose in keyframes:
            r_cw = pose.rotation.T
            self.cameras.append(
                (torch.from_numpy(np.array(r_cw)),
                 torch.from_numpy(np.array(-r_cw @ pose.translation))))
            self.targets.append(
                (torch.from_numpy(np.array(frame.color, dtype=float)),
                 torch.from_numpy(np.array(frame.depth, dtype=float))))
        self.intrinsics = keyframes[0][0].intrinsics

    def loss_at(self, k: int, with_grad: bool) -> torch.Tensor:
        r_cw, t_cw = self.cameras[k]
        gt_color, gt_depth = self.targets[k]
        ctx = torch.enable_grad() if with_grad else torch.no_grad()
        with ctx:
            color, depth_num, wsum = render_torch(
                self.params["centers"], self.params["scales"],
                self.params["orientations"], self.params["colors"],
                self.params["opacities"], r_cw, t_cw, self.intrinsics)
            return loss_torch(color, depth_num, wsum, gt_color, gt_depth,
                              self.w)

    def step(self, k: int) -> float:
        loss = self.loss_at(k, with_grad=True)
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        loss = loss.detach()
        with torch.no_grad():
            self.params["scales"].clamp_(min=MIN_SCALE)
            q = self.params["orientations"]
            q.div_(q.norm(dim=1, keepdim=True))
            self.params["colors"].clamp_(0.0, 1.0)
            self.params["opacities"].clamp_(MIN_OPACITY, 1.0)
        return float(loss)

    def write_back(self) -> None:
        self.gmap.set_arrays(*(self.params[n].detach().numpy().copy()
                               for n in ("centers", "scales", "orientations",
                                         "colors", "opacities")))


def optimize_map(
    gmap: GaussianMap,
    keyframes: list[tuple[Frame, Pose]],
    iters: int,
    w: LossWeights,
    rng: np.random.Generator | None = None,
    lrs: dict | None = None,
    history_out: list | None = None,
) -> float:
    """Descend the rendering loss on all splat parameters over uniformly
    sampled keyframes; returns the mean loss over the last 10 iterations."""
    if rng is None:
        rng = np.random.default_rng(0)
    engine = _SplatOptimizer(
        gmap, keyframes, w,
        trainable=("centers", "scales", "orientations", "colors",
                   "opacities"),
        lrs=lrs)
    recent: list[float] = []
    for _ in range(iters):
        k = int(rng.integers(len(keyframes)))
        loss = engine.step(k)
        recent.append(loss)
        if history_out is not None:
            history_out.append(loss)
    engine.write_back()
    if not recent:
        return float(engine.loss_at(0, with_grad=False))
    return float(np.mean(recent[-10:]))


def refine_colors(
    gmap: GaussianMap,
    keyframes: list[tuple[Frame, Pose]],
    iters: int,
    strategy: SamplingStrategy,
    w: LossWeights | None = None,
    rng: np.random.Generator | None = None,
    update_positions: bool = True,
    update_opacities: bool = True,
    lrs: dict | None = None,
) -> float:
    """Appearance refinement at fixed splat count.

    Keyframes are sampled by the given strategy using a lazily refreshed
    per-keyframe loss cache (an entry is recomputed whenever that keyframe is
    rendered). Returns the mean PSNR over all keyframes at the end.
    """
    from .evalkit import psnr

    if w is None:
        w = LossWeights()
    if rng is None:
        rng = np.random.default_rng(0)
    n_before = len(gmap)
    trainable = ["colors"]
    if update_positions:
        trainable.append("centers")
    if update_opacities:
        trainable.append("opacities")
    engine = _SplatOptimizer(gmap, keyframes, w, trainable=tuple(trainable),
                             lrs=lrs)
    losses = np.array([float(engine.loss_at(k, with_grad=False))
                       for k in range(len(keyframes))])
    for _ in range(iters):
        k = sample_keyframe(losses, strategy, rng)
        losses[k] = engine.step(k)
    engine.write_back()
    assert len(gmap) == n_before, "refinement must not add or remove splats"

    values = []
    for frame, pose in keyframes:
        img = render(gmap, pose, frame.intrinsics)
        values.append(psnr(np.clip(img.color, 0.0, 1.0), frame.color))
    return float(np.mean(values))
