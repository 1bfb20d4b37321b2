"""Pinhole camera model, rigid transforms, and closed-form rigid registration.

Conventions used throughout the package:

* Camera frame: x right, y down, z forward (in front of the camera is z > 0).
* A ``Pose`` stores the world-from-camera transform: ``X_world = R @ X_cam + t``.
* Pixel coordinates are continuous; the center of the pixel at array index
  ``[row, col]`` is ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateGeometry,
    InsufficientCorrespondences,
    InvalidDepth,
)

ORTHONORMALITY_TOL = 1e-9
# Rank test on the match covariance: second singular value below this
# fraction of the largest means the point configuration is (near) collinear
# and the rotation about the common line is unconstrained. Rank-2 (coplanar)
# configurations still determine a unique proper rotation and are accepted.
DEGENERACY_RTOL = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point in pixels,
    image size in pixels, and the usable depth range in meters."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise ValueError("depth clip range must satisfy 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    def matrix(self) -> np.ndarray:
        """3x3 calibration matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def _as_rigid_rotation(rotation: np.ndarray) -> np.ndarray:
    r = np.array(rotation, dtype=float)
    if r.shape != (3, 3):
        raise ValueError("rotation must be a 3x3 matrix")
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation must be finite")
    if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMALITY_TOL:
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > ORTHONORMALITY_TOL:
        raise ValueError("rotation must have determinant +1")
    r.flags.writeable = False
    return r


@dataclass(frozen=True)
class Pose:
    """Rigid body transform (rotation + translation), world-from-camera.

    ``apply`` maps camera-frame points to world-frame points.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rigid_rotation(self.rotation))
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        if T.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous transform")
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform."""
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)


def compose(a: Pose, b: Pose) -> Pose:
    """Group composition: (compose(a, b)).apply(x) == a.apply(b.apply(x))."""
    return a.compose(b)


def invert(p: Pose) -> Pose:
    return p.inverse()


def rotation_angle(r: np.ndarray) -> float:
    """Rotation angle of a 3x3 rotation matrix, in radians."""
    c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(c))


@dataclass(frozen=True)
class PointSet:
    """A batch of 3D points tagged with the frame they live in."""

    points: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class PixelMatch:
    """One 2D correspondence between the previous frame (u0, v0) and the
    current frame (u1, v1), with a matcher confidence in [0, 1]."""

    u0: float
    v0: float
    u1: float
    v1: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must lie in [0, 1]")


def _points_array(points) -> np.ndarray:
    if isinstance(points, PointSet):
        return points.points
    return np.asarray(points, dtype=float).reshape(-1, 3)


def back_project(pixel, depth: float, K: CameraIntrinsics) -> np.ndarray:
    """Lift a pixel with known depth to a camera-frame 3D point."""
    d = float(depth)
    if not np.isfinite(d) or d <= 0:
        raise InvalidDepth(f"depth must be positive and finite, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    return np.array([(u - K.cx) / K.fx * d, (v - K.cy) / K.fy * d, d])


def back_project_pixels(
    us: np.ndarray, vs: np.ndarray, depths: np.ndarray, K: CameraIntrinsics
) -> np.ndarray:
    """Vectorized back-projection; caller guarantees positive depths."""
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    depths = np.asarray(depths, dtype=float)
    return np.stack(
        [(us - K.cx) / K.fx * depths, (vs - K.cy) / K.fy * depths, depths], axis=-1
    )


def project(point: np.ndarray, K: CameraIntrinsics) -> tuple[float, float, float]:
    """Project a camera-frame point to (u, v, depth)."""
    x, y, z = np.asarray(point, dtype=float).reshape(3)
    if z <= 0:
        raise BehindCamera(f"point has non-positive depth z={z}")
    return (K.fx * x / z + K.cx, K.fy * y / z + K.cy, z)


def project_points(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized projection of (N, 3) camera-frame points to (N, 3) of
    (u, v, z). No validity checks; mask on z > 0 at the call site."""
    pts = _points_array(points)
    z = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * pts[:, 0] / z + K.cx
        v = K.fy * pts[:, 1] / z + K.cy
    return np.stack([u, v, z], axis=-1)


def _svd3(h: np.ndarray):
    try:
        return np.linalg.svd(h)
    except np.linalg.LinAlgError:
        # Jacobi-style fallback through the symmetric eigenproblem of HᵀH;
        # eigh uses a different (more robust) LAPACK path than gesdd.
        w, v = np.linalg.eigh(h.T @ h)
        order = np.argsort(w)[::-1]
        s = np.sqrt(np.clip(w[order], 0.0, None))
        vmat = v[:, order]
        umat = np.zeros((3, 3))
        for i in range(3):
            if s[i] > 0:
                umat[:, i] = h @ vmat[:, i] / s[i]
            else:
                umat[:, i] = np.cross(umat[:, (i + 1) % 3], umat[:, (i + 2) % 3])
        return umat, s, vmat.T


def estimate_rigid_transform(src, dst, *, allow_degenerate: bool = False) -> Pose:
    """Least-squares rigid transform mapping ``src`` onto ``dst``.

    Returns the (R, t) minimizing sum_i ||dst_i - (R @ src_i + t)||^2 via
    centroid subtraction, SVD of the match covariance H = Qs^T Qd, R = V U^T
    with a last-column sign flip when det < 0, and t = c_dst - R @ c_src.
    The result always satisfies det(R) = +1, even for reflective inputs.

    ``allow_degenerate`` skips the collinearity rejection (and admits 2-point
    inputs); used for trajectory alignment where only the residual matters
    and any optimal minimizer is acceptable.
    """
    p_src = _points_array(src)
    p_dst = _points_array(dst)
    if p_src.shape != p_dst.shape:
        raise ValueError("source and destination must have the same shape")
    min_points = 2 if allow_degenerate else 3
    if p_src.shape[0] < min_points:
        raise InsufficientCorrespondences(
            f"need at least {min_points} correspondences, got {p_src.shape[0]}"
        )

    c_src = p_src.mean(axis=0)
    c_dst = p_dst.mean(axis=0)
    q_src = p_src - c_src
    q_dst = p_dst - c_dst

    h = q_src.T @ q_dst
    u, s, vt = _svd3(h)
    if not allow_degenerate:
        if s[0] <= 0 or s[1] < DEGENERACY_RTOL * s[0]:
            raise DegenerateGeometry(
                "correspondences are collinear or otherwise rank-deficient"
            )
    v = vt.T
    r = v @ u.T
    if np.linalg.det(r) < 0:
        v = v.copy()
        v[:, -1] *= -1.0
        r = v @ u.T
    t = c_dst - r @ c_src
    return Pose(r, t)
