"""2D correspondences between consecutive frames and their lift to 3D pairs.

Matchers produce :class:`~splatslam.geometry.PixelMatch` lists; the tracker
then confidence-filters them, truncates unreliable far depths, and lifts the
survivors to paired camera-frame point sets.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np

from .datasets import Frame
from .errors import DatasetError, EmptyMatchSet, InsufficientCorrespondences
from .geometry import PixelMatch, PointSet, back_project, project_points

# A match is usable only if the depth stored at its pixel belongs to the
# matched feature itself (not a neighboring surface).
DEPTH_CONSISTENCY_TOL = 1e-6


class CorrespondenceProvider(ABC):
    """Behavioral contract: given two frames, return in-bounds pixel matches
    with confidences in [0, 1]."""

    @abstractmethod
    def match(self, frame0: Frame, frame1: Frame) -> list[PixelMatch]:
        raise NotImplementedError


def confidence_filter(
    matches: list[PixelMatch], min_confidence: float
) -> list[PixelMatch]:
    """Keep matches with confidence >= min_confidence, preserving order."""
    return [m for m in matches if m.confidence >= min_confidence]


def nearest_rank_threshold(values: np.ndarray, percentile: float) -> float:
    """Nearest-rank percentile: the ceil(p*n)-th order statistic (1-based)."""
    values = np.sort(np.asarray(values, dtype=float))
    n = len(values)
    rank = max(1, math.ceil(percentile * n))
    return float(values[rank - 1])


def truncate_by_depth(
    entries: list[tuple[PixelMatch, float, float]], percentile: float
) -> list[tuple[PixelMatch, float, float]]:
    """Drop matches with unreliable far depths.

    The threshold is the nearest-rank percentile of the *current* frame's
    matched depths; a match is kept only if its depth in both frames is at or
    below it. If the symmetric rule would empty the result (possible when the
    two frames' depth ranges are disjoint), the threshold is applied to the
    current frame only so the nearest-rank element always survives.
    """
    if not entries:
        raise EmptyMatchSet("cannot truncate an empty match list")
    if not (0.0 < percentile <= 1.0):
        raise ValueError("percentile must lie in (0, 1]")
    depths1 = np.array([d1 for _, _, d1 in entries])
    threshold = nearest_rank_threshold(depths1, percentile)
    kept = [e for e in entries if e[1] <= threshold and e[2] <= threshold]
    if not kept:
        kept = [e for e in entries if e[2] <= threshold]
    return kept


def lift_matches(
    matches: list[PixelMatch], frame0: Frame, frame1: Frame
) -> tuple[PointSet, PointSet]:
    """Back-project matches into each camera's local frame.

    Matches whose pixel has no valid depth in either frame are dropped. The
    two returned sets are index-aligned and equal length.
    """
    k0, k1 = frame0.intrinsics, frame1.intrinsics
    pts0 = []
    pts1 = []
    for m in matches:
        d0 = frame0.depth_at(m.u0, m.v0)
        d1 = frame1.depth_at(m.u1, m.v1)
        if d0 <= 0 or d1 <= 0:
            continue
        pts0.append(back_project((m.u0, m.v0), d0, k0))
        pts1.append(back_project((m.u1, m.v1), d1, k1))
    if len(pts0) < 3:
        raise InsufficientCorrespondences(
            f"only {len(pts0)} matches have valid depth in both frames"
        )
    return (
        PointSet(np.array(pts0), frame="camera"),
        PointSet(np.array(pts1), frame="camera"),
    )


class SyntheticMatcher(CorrespondenceProvider):
    """Oracle matcher backed by a synthetic scene with known geometry.

    Emits the exact projections of scene landmarks visible in both frames,
    keeping only landmarks whose depth-image pixel actually stores that
    landmark's depth (no occlusion or footprint overlap at the pixel). With
    ``noise_px = 0`` and ``dropout = 0`` the matches are exact reprojections
    of shared scene points.
    """

    def __init__(self, scene, noise_px: float = 0.0, dropout: float = 0.0,
                 seed: int = 0, depth_tol: float = DEPTH_CONSISTENCY_TOL):
        if noise_px < 0:
            raise ValueError("noise_px must be non-negative")
        if not (0.0 <= dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")
        self.scene = scene
        self.noise_px = float(noise_px)
        self.dropout = float(dropout)
        # Loosen to let deliberately corrupted depths through to the tracker
        # (sensor-noise experiments); the default keeps matches on-feature.
        self.depth_tol = float(depth_tol)
        self.rng = np.random.default_rng(seed)

    def _landmark_pixels(self, frame: Frame):
        """Continuous projections of all landmarks into a frame, with a
        per-landmark validity mask (in frustum, and the owning depth pixel
        stores this landmark's depth)."""
        k = frame.intrinsics
        pose = self.scene.gt_pose(frame.id)
        cam_from_world = pose.inverse()
        pts_cam = cam_from_world.apply(self.scene.landmarks())
        uvz = project_points(pts_cam, k)
        u, v, z = uvz[:, 0], uvz[:, 1], uvz[:, 2]
        ok = (z > k.near) & (z < k.far)
        ok &= (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
        cols = np.clip(np.floor(u).astype(int), 0, k.width - 1)
        rows = np.clip(np.floor(v).astype(int), 0, k.height - 1)
        stored = frame.depth[rows, cols]
        ok &= (stored > 0) & (np.abs(stored - z) <= self.depth_tol)
        return u, v, ok

    def match(self, frame0: Frame, frame1: Frame) -> list[PixelMatch]:
        u0, v0, ok0 = self._landmark_pixels(frame0)
        u1, v1, ok1 = self._landmark_pixels(frame1)
        if self.noise_px > 0:
            n = len(u0)
            u0 = u0 + self.rng.normal(0.0, self.noise_px, n)
            v0 = v0 + self.rng.normal(0.0, self.noise_px, n)
            u1 = u1 + self.rng.normal(0.0, self.noise_px, n)
            v1 = v1 + self.rng.normal(0.0, self.noise_px, n)
            # Jittered matches must still point at their own feature's depth
            # pixel; anything that slid onto a neighboring surface is an
            # unreliable match the upstream matcher would not have kept.
            _, _, ok0n = self._recheck(frame0, u0, v0)
            _, _, ok1n = self._recheck(frame1, u1, v1)
            ok0 &= ok0n
            ok1 &= ok1n
        keep = ok0 & ok1
        if self.dropout > 0:
            keep &= self.rng.random(len(keep)) >= self.dropout
        return [
            PixelMatch(u0[i], v0[i], u1[i], v1[i], confidence=1.0)
            for i in np.nonzero(keep)[0]
        ]

    def _recheck(self, frame: Frame, u: np.ndarray, v: np.ndarray):
        k = frame.intrinsics
        pose = self.scene.gt_pose(frame.id)
        pts_cam = pose.inverse().apply(self.scene.landmarks())
        z = pts_cam[:, 2]
        ok = (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
        cols = np.clip(np.floor(u).astype(int), 0, k.width - 1)
        rows = np.clip(np.floor(v).astype(int), 0, k.height - 1)
        stored = frame.depth[rows, cols]
        ok &= (stored > 0) & (np.abs(stored - z) <= self.depth_tol)
        return u, v, ok


class FileMatcher(CorrespondenceProvider):
    """Load externally exported matches from ``matches_<i>_<j>.txt`` files.

    Each line holds 5 whitespace-separated decimals ``u0 v0 u1 v1 conf``;
    lines starting with ``#`` are ignored. Out-of-bounds matches are dropped.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise DatasetError(f"match directory not found: {directory}")

    def match(self, frame0: Frame, frame1: Frame) -> list[PixelMatch]:
        path = self.directory / f"matches_{frame0.id}_{frame1.id}.txt"
        if not path.exists():
            raise DatasetError(f"no match file for pair "
                               f"({frame0.id}, {frame1.id}): {path}")
        k0, k1 = frame0.intrinsics, frame1.intrinsics
        matches = []
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise DatasetError(f"{path}:{lineno}: expected 5 fields")
            try:
                u0, v0, u1, v1, conf = (float(x) for x in parts)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            if not (0 <= u0 < k0.width and 0 <= v0 < k0.height
                    and 0 <= u1 < k1.width and 0 <= v1 < k1.height):
                continue
            matches.append(PixelMatch(u0, v0, u1, v1, confidence=conf))
        return matches


def write_matches(path, matches: list[PixelMatch]) -> None:
    """Write matches in the FileMatcher text format."""
    lines = ["# u0 v0 u1 v1 conf"]
    for m in matches:
        lines.append(f"{m.u0:.4f} {m.v0:.4f} {m.u1:.4f} {m.v1:.4f} "
                     f"{m.confidence:.4f}")
    Path(path).write_text("\n".join(lines) + "\n")
