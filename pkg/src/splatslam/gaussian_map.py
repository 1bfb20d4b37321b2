"""Scene representation: Gaussian splats with visibility queries, gated ICP
alignment, keyframe bookkeeping, and snapshot export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import EmptyPointSet
from .geometry import (
    CameraIntrinsics,
    PointSet,
    Pose,
    estimate_rigid_transform,
    project_points,
)

UNIT_QUAT_TOL = 1e-9


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """(w, x, y, z) unit quaternion(s) to rotation matrix/matrices."""
    q = np.asarray(q, dtype=float)
    xyzw = np.concatenate([q[..., 1:], q[..., :1]], axis=-1)
    return Rotation.from_quat(xyzw).as_matrix()


@dataclass
class GaussianSplat:
    """One map primitive: center (m), per-axis scale (m), orientation as a
    (w, x, y, z) unit quaternion, RGB color in [0,1], opacity in (0,1]."""

    center: np.ndarray
    scale: np.ndarray
    orientation: np.ndarray
    color: np.ndarray
    opacity: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.scale = np.asarray(self.scale, dtype=float).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=float).reshape(4)
        self.color = np.asarray(self.color, dtype=float).reshape(3)
        if np.any(self.scale <= 0):
            raise ValueError("scale components must be positive")
        if abs(np.linalg.norm(self.orientation) - 1.0) > UNIT_QUAT_TOL:
            raise ValueError("orientation quaternion must be unit-norm")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ValueError("color must lie in [0, 1]^3")
        if not (0.0 < self.opacity <= 1.0):
            raise ValueError("opacity must lie in (0, 1]")

    def covariance(self) -> np.ndarray:
        """3x3 covariance R diag(scale^2) R^T; PSD by construction."""
        r = quat_to_rotation(self.orientation)
        return (r * self.scale**2) @ r.T


class GaussianMap:
    """Growable splat collection plus the keyframe list.

    Splat attributes are stored as packed arrays (``centers`` (N,3),
    ``scales`` (N,3), ``orientations`` (N,4) wxyz, ``colors`` (N,3),
    ``opacities`` (N,)); the ``splats`` property materializes them as
    :class:`GaussianSplat` values for inspection.
    """

    def __init__(self):
        self.centers = np.zeros((0, 3))
        self.scales = np.zeros((0, 3))
        self.orientations = np.zeros((0, 4))
        self.colors = np.zeros((0, 3))
        self.opacities = np.zeros((0,))
        self.keyframes: list[tuple[int, Pose]] = []

    def __len__(self) -> int:
        return self.centers.shape[0]

    @property
    def splats(self) -> list[GaussianSplat]:
        return [self.splat(i) for i in range(len(self))]

    def splat(self, i: int) -> GaussianSplat:
        return GaussianSplat(
            center=self.centers[i].copy(),
            scale=self.scales[i].copy(),
            orientation=self.orientations[i].copy(),
            color=self.colors[i].copy(),
            opacity=float(self.opacities[i]),
        )

    def add(self, splat: GaussianSplat) -> None:
        self.add_arrays(
            splat.center[None], splat.scale[None], splat.orientation[None],
            splat.color[None], np.array([splat.opacity]),
        )

    def add_arrays(self, centers, scales, orientations, colors, opacities) -> None:
        centers = np.asarray(centers, dtype=float).reshape(-1, 3)
        scales = np.asarray(scales, dtype=float).reshape(-1, 3)
        orientations = np.asarray(orientations, dtype=float).reshape(-1, 4)
        colors = np.asarray(colors, dtype=float).reshape(-1, 3)
        opacities = np.asarray(opacities, dtype=float).reshape(-1)
        if np.any(scales <= 0):
            raise ValueError("scale components must be positive")
        if np.any((opacities <= 0) | (opacities > 1)):
            raise ValueError("opacity must lie in (0, 1]")
        norms = np.linalg.norm(orientations, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_QUAT_TOL):
            raise ValueError("orientation quaternions must be unit-norm")
        self.centers = np.concatenate([self.centers, centers])
        self.scales = np.concatenate([self.scales, scales])
        self.orientations = np.concatenate([self.orientations, orientations])
        self.colors = np.concatenate([self.colors, np.clip(colors, 0.0, 1.0)])
        self.opacities = np.concatenate([self.opacities, opacities])

    def set_arrays(self, centers, scales, orientations, colors, opacities) -> None:
        """Replace all splat attributes; sizes must stay consistent."""
        n = len(centers)
        if not all(len(a) == n for a in (scales, orientations, colors, opacities)):
            raise ValueError("attribute arrays must have equal length")
        self.centers = np.asarray(centers, dtype=float).reshape(n, 3)
        self.scales = np.asarray(scales, dtype=float).reshape(n, 3)
        self.orientations = np.asarray(orientations, dtype=float).reshape(n, 4)
        self.colors = np.asarray(colors, dtype=float).reshape(n, 3)
        self.opacities = np.asarray(opacities, dtype=float).reshape(n)

    def add_keyframe(self, frame_id: int, pose: Pose) -> None:
        if self.keyframes and frame_id <= self.keyframes[-1][0]:
            raise ValueError("keyframe ids must be strictly increasing")
        self.keyframes.append((frame_id, pose))

    def transformed(self, pose: Pose) -> "GaussianMap":
        """A copy with all splats moved by the given rigid transform."""
        out = GaussianMap()
        quats = np.concatenate(
            [self.orientations[:, 1:], self.orientations[:, :1]], axis=1)
        rot = Rotation.from_matrix(pose.rotation)
        new_q = (rot * Rotation.from_quat(quats)).as_quat()
        out.add_arrays(
            pose.apply(self.centers),
            self.scales.copy(),
            np.concatenate([new_q[:, 3:], new_q[:, :3]], axis=1),
            self.colors.copy(),
            self.opacities.copy(),
        )
        out.keyframes = [(i, pose.compose(p)) for i, p in self.keyframes]
        return out


@dataclass(frozen=True)
class KeyframePolicy:
    """Keyframe selection: ``dense`` keeps a frame when the visible-splat IoU
    against the last keyframe drops below ``iou_threshold``; ``sparse`` keeps
    every ``k``-th frame."""

    mode: str = "dense"
    iou_threshold: float = 0.9
    k: int = 5

    def __post_init__(self):
        if self.mode not in ("dense", "sparse"):
            raise ValueError("mode must be 'dense' or 'sparse'")
        if not (0.0 < self.iou_threshold < 1.0):
            raise ValueError("iou_threshold must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be at least 1")


def visible_subset(
    gmap: GaussianMap, pose: Pose, K: CameraIntrinsics
) -> np.ndarray:
    """Indices of splats whose center lies in the camera frustum: depth in
    (near, far) and projection inside the image bounds."""
    if len(gmap) == 0:
        return np.zeros(0, dtype=int)
    cam = pose.inverse().apply(gmap.centers)
    uvz = project_points(cam, K)
    u, v, z = uvz[:, 0], uvz[:, 1], uvz[:, 2]
    ok = (z > K.near) & (z < K.far)
    ok &= (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    return np.nonzero(ok)[0]


def frustum_iou(
    gmap: GaussianMap, pose_a: Pose, pose_b: Pose, K: CameraIntrinsics
) -> float:
    """Intersection-over-union of the splat index sets visible from the two
    poses; 0 when the union is empty."""
    a = set(visible_subset(gmap, pose_a, K).tolist())
    b = set(visible_subset(gmap, pose_b, K).tolist())
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def should_add_keyframe(
    policy: KeyframePolicy,
    gmap: GaussianMap,
    candidate_pose: Pose,
    frame_id: int,
    K: CameraIntrinsics,
) -> bool:
    """Frame 0 (or an empty keyframe list) always starts a keyframe."""
    if frame_id == 0 or not gmap.keyframes:
        return True
    if policy.mode == "sparse":
        return frame_id % policy.k == 0
    last_pose = gmap.keyframes[-1][1]
    return frustum_iou(gmap, last_pose, candidate_pose, K) < policy.iou_threshold


def voxel_downsample(points, voxel: float):
    """One centroid per occupied voxel. Accepts/returns a PointSet or a raw
    (N, 3) array, matching the input type."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    frame = None
    if isinstance(points, PointSet):
        frame = points.frame
        pts = points.points
    else:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        out = pts.copy()
        return PointSet(out, frame=frame) if frame is not None else out
    keys = np.floor(pts / voxel).astype(np.int64)
    _, inverse, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, pts)
    out = sums / counts[:, None]
    return PointSet(out, frame=frame) if frame is not None else out


@dataclass(frozen=True)
class IcpParams:
    """Point-to-point ICP settings. ``min_fitness``/``max_error`` form the
    acceptance gate; a result is usable only if fitness > min_fitness and
    inlier RMSE < max_error."""

    max_iters: int = 30
    max_corr_dist: float = 0.05
    tol: float = 1e-8
    min_fitness: float = 0.2
    max_error: float = 0.1


@dataclass(frozen=True)
class IcpResult:
    pose: Pose
    fitness: float
    error: float
    iterations: int
    accepted: bool


def icp_align(src, dst, params: IcpParams = IcpParams()) -> IcpResult:
    """Point-to-point ICP aligning ``src`` onto ``dst``.

    Alternates nearest-neighbor correspondence (within ``max_corr_dist``)
    with a closed-form rigid fit on the inliers until the incremental motion
    drops below ``tol`` or ``max_iters`` is reached. Fitness is the inlier
    fraction of the source set at convergence and error the inlier RMSE;
    ``accepted`` reflects the fitness/error gate.
    """
    src_pts = src.points if isinstance(src, PointSet) else np.asarray(src, float)
    dst_pts = dst.points if isinstance(dst, PointSet) else np.asarray(dst, float)
    src_pts = src_pts.reshape(-1, 3)
    dst_pts = dst_pts.reshape(-1, 3)
    if len(src_pts) == 0 or len(dst_pts) == 0:
        raise EmptyPointSet("icp_align requires two non-empty point sets")

    tree = cKDTree(dst_pts)
    current = Pose.identity()
    iterations = 0
    for iterations in range(1, params.max_iters + 1):
        moved = current.apply(src_pts)
        dists, idx = tree.query(moved, distance_upper_bound=params.max_corr_dist)
        inliers = np.isfinite(dists)
        if inliers.sum() < 3:
            break
        try:
            step = estimate_rigid_transform(moved[inliers], dst_pts[idx[inliers]])
        except Exception:
            break
        current = step.compose(current)
        motion = (np.linalg.norm(step.rotation - np.eye(3))
                  + np.linalg.norm(step.translation))
        if motion < params.tol:
            break

    moved = current.apply(src_pts)
    dists, _ = tree.query(moved, distance_upper_bound=params.max_corr_dist)
    inliers = np.isfinite(dists)
    n_in = int(inliers.sum())
    fitness = n_in / len(src_pts)
    error = float(np.sqrt(np.mean(dists[inliers] ** 2))) if n_in else float("inf")
    accepted = fitness > params.min_fitness and error < params.max_error
    return IcpResult(pose=current, fitness=fitness, error=error,
                     iterations=iterations, accepted=accepted)


# ---------------------------------------------------------------------------
# Snapshot export: ASCII PLY-style point list, one splat per vertex with
# fields x y z sx sy sz qw qx qy qz red green blue opacity (all float).

_PLY_FIELDS = ("x", "y", "z", "sx", "sy", "sz", "qw", "qx", "qy", "qz",
               "red", "green", "blue", "opacity")


def save_map_ply(gmap: GaussianMap, path) -> None:
    header = ["ply", "format ascii 1.0", f"element vertex {len(gmap)}"]
    header += [f"property float64 {name}" for name in _PLY_FIELDS]
    header.append("end_header")
    rows = np.concatenate(
        [gmap.centers, gmap.scales, gmap.orientations, gmap.colors,
         gmap.opacities[:, None]], axis=1)
    body = "\n".join(" ".join(f"{v:.9g}" for v in row) for row in rows)
    text = "\n".join(header) + ("\n" + body if len(gmap) else "") + "\n"
    Path(path).write_text(text)


def load_map_ply(path) -> GaussianMap:
    lines = Path(path).read_text().splitlines()
    try:
        end = lines.index("end_header")
    except ValueError as exc:
        raise ValueError(f"{path}: not a map snapshot (no end_header)") from exc
    gmap = GaussianMap()
    data = [
        [float(x) for x in line.split()] for line in lines[end + 1:] if line.strip()
    ]
    if data:
        arr = np.array(data)
        if arr.shape[1] != len(_PLY_FIELDS):
            raise ValueError(f"{path}: expected {len(_PLY_FIELDS)} fields")
        quats = arr[:, 6:10]
        quats = quats / np.linalg.norm(quats, axis=1, keepdims=True)
        gmap.add_arrays(arr[:, 0:3], arr[:, 3:6], quats, arr[:, 10:13],
                        arr[:, 13])
    return gmap
