"""Differentiable CPU splat rasterizer: RGB + depth images, the combined
photometric/depth loss, and pose gradients.

Per pixel, each visible splat contributes a weight proportional to
``opacity_i * exp(-0.5 * d^T S^-1 d)`` where ``S`` is its projected 2x2
covariance and ``d`` the offset from the projected center. Contributions are
truncated beyond 3 sigma; the Gaussian is shifted and rescaled so the weight
tapers continuously to zero at the truncation boundary (a hard cutoff would
make the image discontinuous in the pose and splat parameters, which breaks
gradient-based refinement and any finite-difference check). Colors composite
front-to-back as ``sum_i color_i * w_i * T_i`` with transmittance
``T_i = prod_{j<i}(1-w_j)``; depth composites as the weighted mean over the
same weights.

The forward pass is written with torch tensors (float64, CPU) so gradients
with respect to the camera pose and the splat parameters are exact chain-rule
derivatives of the compositing math; finite-difference verification lives in
the test suite. Only pixels inside each splat's 3-sigma bounding box are
evaluated; the per-pixel blend order is fixed by a stable depth sort, so the
output is deterministic and independent of the input splat order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .datasets import Frame
from .errors import BehindCamera, ShapeError
from .gaussian_map import GaussianMap, GaussianSplat
from .geometry import CameraIntrinsics, Pose

COV_EPS = 1e-6       # diagonal regularizer on the projected covariance
CUTOFF_SQ = 9.0      # truncate contributions beyond 3 sigma
# Shift/rescale constants: w = opacity * (exp(-q/2) - CUT) / (1 - CUT),
# clamped at zero, so the weight is continuous at q = CUTOFF_SQ and equals
# the opacity at the center.
_CUT = float(np.exp(-0.5 * CUTOFF_SQ))
_CUT_SCALE = 1.0 / (1.0 - _CUT)
MAX_WEIGHT = 1.0 - 1e-10

_DT = torch.float64


@dataclass(frozen=True)
class LossWeights:
    """Mixing weight: loss = lam * color_l1 + (1 - lam) * depth_l1."""

    lam: float = 0.9

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError("lam must lie in [0, 1]")


@dataclass
class RenderedImage:
    """color (H,W,3) in [0,1]; depth (H,W) meters, 0 where nothing rendered;
    alpha (H,W) accumulated opacity in [0,1]."""

    color: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray


def _t(arr) -> torch.Tensor:
    return torch.from_numpy(np.array(arr, dtype=np.float64))


def so3_exp(w: torch.Tensor) -> torch.Tensor:
    """Rotation matrix exp([w]_x), smooth at w = 0."""
    theta_sq = (w * w).sum()
    small = theta_sq < 1e-12
    safe = torch.where(small, torch.ones_like(theta_sq), theta_sq)
    theta = torch.sqrt(safe)
    a = torch.where(small, 1.0 - theta_sq / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta_sq / 24.0,
                    (1.0 - torch.cos(theta)) / safe)
    wx = torch.stack([
        torch.stack([torch.zeros((), dtype=w.dtype), -w[2], w[1]]),
        torch.stack([w[2], torch.zeros((), dtype=w.dtype), -w[0]]),
        torch.stack([-w[1], w[0], torch.zeros((), dtype=w.dtype)]),
    ])
    return torch.eye(3, dtype=w.dtype) + a * wx + b * (wx @ wx)


def quats_to_rotmats(q: torch.Tensor) -> torch.Tensor:
    """(N, 4) wxyz quaternions (normalized here) to (N, 3, 3) rotations."""
    q = q / q.norm(dim=1, keepdim=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    row0 = torch.stack(
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=1)
    row1 = torch.stack(
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=1)
    row2 = torch.stack(
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=1)
    return torch.stack([row0, row1, row2], dim=1)


def _splat_pixel_pairs(u, v, caa, cbb, cab, H: int, W: int):
    """Expand each splat's 3-sigma bounding box into flat (splat, pixel)
    pairs. All inputs are numpy (off-graph); the box of half-width
    3*sqrt(lambda_max) always contains the 3-sigma ellipse, so pixels the box
    misses would have had exactly zero weight."""
    mid = 0.5 * (caa + cbb)
    rad = np.sqrt(0.25 * (caa - cbb) ** 2 + cab * cab)
    r_pix = 3.0 * np.sqrt(mid + rad)
    col0 = np.clip(np.floor(u - r_pix), 0, W - 1).astype(np.int64)
    col1 = np.clip(np.ceil(u + r_pix), 0, W - 1).astype(np.int64)
    row0 = np.clip(np.floor(v - r_pix), 0, H - 1).astype(np.int64)
    row1 = np.clip(np.ceil(v + r_pix), 0, H - 1).astype(np.int64)
    widths = col1 - col0 + 1
    heights = row1 - row0 + 1
    counts = widths * heights
    total = int(counts.sum())
    splat_ids = np.repeat(np.arange(len(u), dtype=np.int64), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    within = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    cols = col0[splat_ids] + within % widths[splat_ids]
    rows = row0[splat_ids] + within // widths[splat_ids]
    pixel_ids = rows * W + cols
    # Per-pixel segments in front-to-back order: stable sort keeps the
    # depth-sorted splat order within each pixel.
    perm = np.argsort(pixel_ids, kind="stable")
    splat_ids = splat_ids[perm]
    pixel_ids = pixel_ids[perm]
    first = np.empty(total, dtype=bool)
    first[0] = True
    first[1:] = pixel_ids[1:] != pixel_ids[:-1]
    seg_start = np.maximum.accumulate(
        np.where(first, np.arange(total), -1))
    return splat_ids, pixel_ids, seg_start


def render_torch(
    centers: torch.Tensor,
    scales: torch.Tensor,
    quats: torch.Tensor,
    colors: torch.Tensor,
    opacities: torch.Tensor,
    cam_rotation: torch.Tensor,
    cam_translation: torch.Tensor,
    K: CameraIntrinsics,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Differentiable forward pass. ``cam_rotation``/``cam_translation`` map
    world points into the camera frame. Returns (color, depth numerator,
    accumulated weight); divide to get the composited depth."""
    H, W = K.height, K.width
    color_flat = torch.zeros((H * W, 3), dtype=_DT)
    depth_flat = torch.zeros(H * W, dtype=_DT)
    wsum_flat = torch.zeros(H * W, dtype=_DT)
    empty = (color_flat.view(H, W, 3), depth_flat.view(H, W),
             wsum_flat.view(H, W))
    if centers.shape[0] == 0:
        return empty

    cam = centers @ cam_rotation.T + cam_translation

    # Frustum cull + front-to-back order. Selection indices are plain
    # integers (computed off-graph); gradients flow through the gathers.
    with torch.no_grad():
        z_d = cam[:, 2].detach().numpy()
        u_d = np.full_like(z_d, -1.0)
        v_d = np.full_like(z_d, -1.0)
        front = z_d > 0
        u_d[front] = K.fx * cam[front, 0].detach().numpy() / z_d[front] + K.cx
        v_d[front] = K.fy * cam[front, 1].detach().numpy() / z_d[front] + K.cy
        vis = (z_d > K.near) & (z_d < K.far)
        vis &= (u_d >= 0) & (u_d < W) & (v_d >= 0) & (v_d < H)
        order = np.nonzero(vis)[0][np.argsort(z_d[vis], kind="stable")]
    if order.size == 0:
        return empty
    idx = torch.from_numpy(order)

    cam = cam[idx]
    z = cam[:, 2]
    u = K.fx * cam[:, 0] / z + K.cx
    v = K.fy * cam[:, 1] / z + K.cy
    cols = colors[idx]
    opac = opacities[idx]

    # World-space covariance R diag(s^2) R^T, then the 2x2 image-plane
    # covariance through the Jacobian of the world -> pixel map.
    rot = quats_to_rotmats(quats[idx])
    m = rot * scales[idx].unsqueeze(1)
    cov3 = m @ m.transpose(1, 2)
    zero = torch.zeros_like(z)
    jac_cam = torch.stack([
        torch.stack([K.fx / z, zero, -K.fx * cam[:, 0] / (z * z)], dim=1),
        torch.stack([zero, K.fy / z, -K.fy * cam[:, 1] / (z * z)], dim=1),
    ], dim=1)
    jac = jac_cam @ cam_rotation
    cov2 = jac @ cov3 @ jac.transpose(1, 2)
    caa = cov2[:, 0, 0] + COV_EPS
    cbb = cov2[:, 1, 1] + COV_EPS
    cab = cov2[:, 0, 1]
    det = caa * cbb - cab * cab
    ia = cbb / det
    ib = -cab / det
    ic = caa / det

    with torch.no_grad():
        splat_np, pixel_np, seg_start_np = _splat_pixel_pairs(
            u.detach().numpy(), v.detach().numpy(), caa.detach().numpy(),
            cbb.detach().numpy(), cab.detach().numpy(), H, W)
    sid = torch.from_numpy(splat_np)
    pid = torch.from_numpy(pixel_np)
    seg_start = torch.from_numpy(seg_start_np)

    px = torch.from_numpy((pixel_np % W).astype(np.float64)) + 0.5
    py = torch.from_numpy((pixel_np // W).astype(np.float64)) + 0.5
    du = px - u[sid]
    dv = py - v[sid]
    quad = ia[sid] * du * du + 2.0 * ib[sid] * du * dv + ic[sid] * dv * dv
    w = opac[sid] * torch.clamp(
        (torch.exp(-0.5 * quad) - _CUT) * _CUT_SCALE, min=0.0)
    w = torch.clamp(w, max=MAX_WEIGHT)

    # Per-pixel front-to-back transmittance via a segmented exclusive
    # product, computed in log space: T = exp(sum of log(1-w) of the same
    # pixel's nearer splats).
    log_rem = torch.log1p(-w)
    prefix = torch.cumsum(log_rem, dim=0) - log_rem
    transmittance = torch.exp(prefix - prefix[seg_start])
    contrib = w * transmittance

    color_flat = color_flat.index_add(0, pid, contrib[:, None] * cols[sid])
    depth_flat = depth_flat.index_add(0, pid, z[sid] * contrib)
    wsum_flat = wsum_flat.index_add(0, pid, contrib)
    return (color_flat.view(H, W, 3), depth_flat.view(H, W),
            wsum_flat.view(H, W))


def _camera_tensors(pose: Pose) -> tuple[torch.Tensor, torch.Tensor]:
    r_cw = pose.rotation.T
    return _t(r_cw), _t(-r_cw @ pose.translation)


def _map_tensors(gmap: GaussianMap):
    return (_t(gmap.centers), _t(gmap.scales), _t(gmap.orientations),
            _t(gmap.colors), _t(gmap.opacities))


def _finalize(color, depth_num, wsum) -> RenderedImage:
    covered = wsum > 0
    depth = torch.where(covered, depth_num / wsum.clamp(min=1e-300),
                        torch.zeros((), dtype=_DT))
    return RenderedImage(color=color.numpy(), depth=depth.numpy(),
                         alpha=wsum.numpy())


def render(gmap: GaussianMap, pose: Pose, K: CameraIntrinsics) -> RenderedImage:
    """Rasterize the map from a camera pose (world-from-camera)."""
    with torch.no_grad():
        r_cw, t_cw = _camera_tensors(pose)
        color, depth_num, wsum = render_torch(
            *_map_tensors(gmap), r_cw, t_cw, K)
        return _finalize(color, depth_num, wsum)


def projection_jacobian(
    point_world: np.ndarray, pose: Pose, K: CameraIntrinsics
) -> np.ndarray:
    """2x3 Jacobian of the full world -> pixel map at the given world point
    (camera rotation composed with the perspective-projection Jacobian)."""
    cam_from_world = pose.inverse()
    x, y, z = cam_from_world.apply(np.asarray(point_world, dtype=float))
    if z <= 0:
        raise BehindCamera("point is behind the camera")
    jac_cam = np.array([
        [K.fx / z, 0.0, -K.fx * x / z**2],
        [0.0, K.fy / z, -K.fy * y / z**2],
    ])
    return jac_cam @ cam_from_world.rotation


def project_covariance(
    splat: GaussianSplat, pose: Pose, K: CameraIntrinsics
) -> np.ndarray:
    """Projected 2x2 covariance J Sigma J^T (+ eps I), symmetric PSD."""
    jac = projection_jacobian(splat.center, pose, K)
    cov = jac @ splat.covariance() @ jac.T
    cov = 0.5 * (cov + cov.T) + COV_EPS * np.eye(2)
    return cov


def compute_loss(
    rendered: RenderedImage, gt: Frame, w: LossWeights
) -> tuple[float, float, float]:
    """(total, color, depth) losses: mean L1 color over all pixels/channels,
    mean L1 depth over pixels with valid ground-truth depth."""
    if rendered.color.shape != gt.color.shape:
        raise ShapeError(
            f"color shapes differ: {rendered.color.shape} vs {gt.color.shape}")
    if rendered.depth.shape != gt.depth.shape:
        raise ShapeError(
            f"depth shapes differ: {rendered.depth.shape} vs {gt.depth.shape}")
    l_color = float(np.mean(np.abs(gt.color - rendered.color)))
    valid = gt.depth > 0
    if valid.any():
        l_depth = float(np.mean(np.abs(gt.depth[valid] - rendered.depth[valid])))
    else:
        l_depth = 0.0
    total = w.lam * l_color + (1.0 - w.lam) * l_depth
    return total, l_color, l_depth


def loss_torch(
    color: torch.Tensor,
    depth_num: torch.Tensor,
    wsum: torch.Tensor,
    gt_color: torch.Tensor,
    gt_depth: torch.Tensor,
    w: LossWeights,
) -> torch.Tensor:
    """Differentiable counterpart of :func:`compute_loss`."""
    l_color = (gt_color - color).abs().mean()
    valid = gt_depth > 0
    if bool(valid.any()):
        covered = wsum > 0
        depth = torch.where(covered, depth_num / wsum.clamp(min=1e-300),
                            torch.zeros((), dtype=_DT))
        l_depth = (gt_depth[valid] - depth[valid]).abs().mean()
    else:
        l_depth = torch.zeros((), dtype=_DT)
    return w.lam * l_color + (1.0 - w.lam) * l_depth


def pose_objective(
    gmap: GaussianMap,
    pose: Pose,
    gt: Frame,
    K: CameraIntrinsics,
    w: LossWeights,
) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to a left-multiplied 6-DOF pose
    perturbation, ordered (rotation xyz, translation xyz)."""
    xi = torch.zeros(6, dtype=_DT, requires_grad=True)
    e_rot = so3_exp(xi[:3])
    r_wc = e_rot @ _t(pose.rotation)
    t_wc = e_rot @ _t(pose.translation) + xi[3:]
    r_cw = r_wc.T
    t_cw = -(r_cw @ t_wc)
    color, depth_num, wsum = render_torch(*_map_tensors(gmap), r_cw, t_cw, K)
    loss = loss_torch(color, depth_num, wsum, _t(gt.color), _t(gt.depth), w)
    loss.backward()
    grad = xi.grad
    if grad is None:
        grad = torch.zeros(6, dtype=_DT)
    return float(loss.detach()), grad.numpy().copy()


def pose_gradient(
    gmap: GaussianMap,
    pose: Pose,
    gt: Frame,
    K: CameraIntrinsics,
    w: LossWeights,
) -> np.ndarray:
    """Gradient of the combined loss at the given pose; see pose_objective."""
    _, grad = pose_objective(gmap, pose, gt, K, w)
    return grad
