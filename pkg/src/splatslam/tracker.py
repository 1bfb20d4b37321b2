"""Per-frame camera pose estimation.

The pipeline per frame pair: match -> confidence filter -> depth truncation
-> lift to 3D pairs -> closed-form rigid estimate, optionally followed by
gradient-based refinement against the current map rendering.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .datasets import Frame
from .errors import InsufficientCorrespondences
from .frontend import CorrespondenceProvider, confidence_filter, lift_matches, truncate_by_depth
from .gaussian_map import GaussianMap
from .geometry import CameraIntrinsics, Pose, estimate_rigid_transform, invert
from .renderer import LossWeights, compute_loss, pose_objective, render

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-12


@dataclass(frozen=True)
class TrackerConfig:
    """Knobs for one tracking step. ``refine_iters`` = 0 disables the
    rendering-based refinement entirely."""

    refine_iters: int = 50
    step_scale: float = 2e-3
    percentile: float = 0.7
    min_confidence: float = 0.5

    def __post_init__(self):
        if self.refine_iters < 0:
            raise ValueError("refine_iters must be non-negative")
        if self.step_scale <= 0:
            raise ValueError("step_scale must be positive")
        if not (0.0 < self.percentile <= 1.0):
            raise ValueError("percentile must lie in (0, 1]")


@dataclass
class TrackResult:
    pose: Pose
    initial_pose: Pose
    n_matches: int
    elapsed_ms: float


def constant_velocity_predict(pose_prev2: Pose, pose_prev1: Pose) -> Pose:
    """Extrapolate the last inter-frame motion one step forward."""
    step = invert(pose_prev2).compose(pose_prev1)
    return pose_prev1.compose(step)


def _step_pose(pose: Pose, xi: np.ndarray) -> Pose:
    """Left-multiply the (rotation, translation) increment onto the pose."""
    rot = Rotation.from_rotvec(xi[:3]).as_matrix()
    return Pose(rot @ pose.rotation, rot @ pose.translation + xi[3:])


def refine_pose(
    init: Pose,
    frame: Frame,
    gmap: GaussianMap,
    K: CameraIntrinsics,
    iters: int,
    w: LossWeights,
    step_scale: float = 2e-3,
) -> Pose:
    """First-order descent on the rendering loss over a 6-DOF perturbation.

    Per-component adaptive step sizes (Adam-style moment scaling) keep the
    rotation and translation coordinates comparable; the iterate with the
    lowest observed loss is returned, so the result is never worse than the
    initial pose.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if len(gmap) == 0:
        raise ValueError("refine_pose requires a non-empty map")
    pose = init
    best_pose = init
    best_loss = np.inf
    m1 = np.zeros(6)
    m2 = np.zeros(6)
    for t in range(1, iters + 1):
        loss, grad = pose_objective(gmap, pose, frame, K, w)
        if loss < best_loss:
            best_loss = loss
            best_pose = pose
        m1 = ADAM_BETA1 * m1 + (1 - ADAM_BETA1) * grad
        m2 = ADAM_BETA2 * m2 + (1 - ADAM_BETA2) * grad * grad
        mhat = m1 / (1 - ADAM_BETA1**t)
        vhat = m2 / (1 - ADAM_BETA2**t)
        pose = _step_pose(pose, -step_scale * mhat / (np.sqrt(vhat) + ADAM_EPS))
    final_loss = compute_loss(render(gmap, pose, K), frame, w)[0]
    if final_loss < best_loss:
        best_pose = pose
    return best_pose


def track_frame(
    prev: tuple[Frame, Pose],
    cur: Frame,
    provider: CorrespondenceProvider,
    gmap: GaussianMap,
    cfg: TrackerConfig,
    weights: LossWeights | None = None,
) -> TrackResult:
    """Estimate the world-from-camera pose of ``cur``.

    The closed-form relative transform maps previous-camera points onto
    current-camera points, so ``pose_cur = pose_prev ∘ inv(T_rel)``. Raises
    InsufficientCorrespondences when fewer than 3 usable matches survive;
    callers fall back to constant-velocity prediction.
    """
    prev_frame, prev_pose = prev
    if weights is None:
        weights = LossWeights()
    t0 = time.perf_counter()

    matches = provider.match(prev_frame, cur)
    matches = confidence_filter(matches, cfg.min_confidence)
    entries = []
    for m in matches:
        d0 = prev_frame.depth_at(m.u0, m.v0)
        d1 = cur.depth_at(m.u1, m.v1)
        if d0 > 0 and d1 > 0:
            entries.append((m, d0, d1))
    if len(entries) < 3:
        raise InsufficientCorrespondences(
            f"{len(entries)} matches with valid depth")
    entries = truncate_by_depth(entries, cfg.percentile)
    src, dst = lift_matches([m for m, _, _ in entries], prev_frame, cur)
    rel = estimate_rigid_transform(src, dst)
    initial_pose = prev_pose.compose(invert(rel))

    pose = initial_pose
    if cfg.refine_iters > 0 and len(gmap) > 0:
        pose = refine_pose(initial_pose, cur, gmap, cur.intrinsics,
                           cfg.refine_iters, weights, cfg.step_scale)
    elapsed_ms = (time.perf_counter() - t0) * 1e3
    return TrackResult(pose=pose, initial_pose=initial_pose,
                       n_matches=len(entries), elapsed_ms=elapsed_ms)
