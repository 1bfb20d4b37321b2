"""Synthetic RGB-D scenes with exact geometry, used as the test oracle.

A scene is a cloud of small, mostly non-overlapping splat primitives around
the origin plus an analytic orbit trajectory that always looks at the scene.
Frames are produced by the package's own renderer, so ground-truth color and
depth are exactly what a perfect map would reproduce; at any pixel covered by
a single splat the composited depth equals that splat's camera-frame depth to
float precision, which is what makes the synthetic matcher's zero-noise
matches lift exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Frame, Trajectory
from .gaussian_map import GaussianMap
from .geometry import CameraIntrinsics, Pose


def look_at(eye: np.ndarray, target: np.ndarray, up: np.ndarray,
            roll: float = 0.0) -> Pose:
    """World-from-camera pose with +z toward ``target`` (x right, y down)."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        norm = np.linalg.norm(right)
    right = right / norm
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    if roll != 0.0:
        c, s = np.cos(roll), np.sin(roll)
        rot = rot @ np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose(rot, eye)


@dataclass
class SyntheticScene:
    """Splat primitives with known geometry plus a camera path generator.

    ``step_deg`` is the per-frame orbit angle (rotation rate); ``motion``
    scales the translational wobble riding on the orbit. Poses are analytic
    in the frame index, so strided subsets of a sequence share the exact
    same ground truth.
    """

    centers: np.ndarray
    scales: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    intrinsics: CameraIntrinsics
    orbit_radius: float = 2.5
    step_deg: float = 0.6
    motion: float = 1.0
    seed: int = 0
    _phase: float = field(init=False, default=0.0)
    _map: GaussianMap | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        self.scales = np.asarray(self.scales, dtype=float).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        self.opacities = np.asarray(self.opacities, dtype=float).reshape(-1)
        self._phase = float(np.random.default_rng(self.seed).uniform(0, 2 * np.pi))

    @classmethod
    def random(cls, seed: int = 0, n_splats: int = 160,
               intrinsics: CameraIntrinsics | None = None,
               extent: float = 0.8, **kwargs) -> "SyntheticScene":
        rng = np.random.default_rng(seed)
        if intrinsics is None:
            intrinsics = CameraIntrinsics(fx=70.0, fy=70.0, cx=32.0, cy=32.0,
                                          width=64, height=64,
                                          near=0.1, far=20.0)
        centers = rng.uniform(-extent, extent, size=(n_splats, 3))
        scale = rng.uniform(0.012, 0.025, size=(n_splats, 1))
        return cls(
            centers=centers,
            scales=np.repeat(scale, 3, axis=1),
            colors=rng.uniform(0.1, 1.0, size=(n_splats, 3)),
            opacities=np.full(n_splats, 0.95),
            intrinsics=intrinsics,
            seed=seed,
            **kwargs,
        )

    def landmarks(self) -> np.ndarray:
        """Feature points the oracle matcher tracks: the splat centers."""
        return self.centers

    def to_map(self) -> GaussianMap:
        if self._map is None:
            n = len(self.centers)
            quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
            gmap = GaussianMap()
            gmap.add_arrays(self.centers, self.scales, quats, self.colors,
                            self.opacities)
            self._map = gmap
        return self._map

    def gt_pose(self, frame_id: int) -> Pose:
        """Exact pose for a frame index: an orbit that keeps looking at the
        scene, with seed-phased height/radius wobble and a slow roll."""
        theta = np.deg2rad(self.step_deg) * frame_id
        radius = self.orbit_radius * (1.0 + 0.04 * self.motion
                                      * np.sin(1.3 * theta + self._phase))
        height = 0.35 * self.motion * np.sin(2.2 * theta + self._phase)
        eye = np.array([radius * np.sin(theta), height,
                        -radius * np.cos(theta)])
        roll = 0.08 * self.motion * np.sin(1.7 * theta + 0.5 * self._phase)
        return look_at(eye, np.zeros(3), up=np.array([0.0, 1.0, 0.0]),
                       roll=roll)

    def gt_trajectory(self, n_frames: int, fps: float = 30.0) -> Trajectory:
        return Trajectory([(i / fps, self.gt_pose(i)) for i in range(n_frames)])


def generate_synthetic(
    scene: SyntheticScene,
    n_frames: int,
    depth_noise: float = 0.0,
    corrupt_beyond: float | None = None,
    corrupt_scale: float = 0.5,
    noise_seed: int = 0,
    fps: float = 30.0,
) -> tuple[list[Frame], Trajectory]:
    """Render exact frames along the scene's trajectory.

    ``depth_noise`` adds Gaussian noise (std in meters) to all valid depths;
    ``corrupt_beyond`` multiplies every depth beyond that range by a random
    factor in (1, 1 + corrupt_scale], emulating sensors whose measurements
    are only reliable up close.
    """
    from .renderer import render  # local import: renderer pulls in torch

    rng = np.random.default_rng(noise_seed)
    gmap = scene.to_map()
    frames = []
    for i in range(n_frames):
        pose = scene.gt_pose(i)
        img = render(gmap, pose, scene.intrinsics)
        depth = img.depth.copy()
        valid = depth > 0
        if depth_noise > 0:
            depth[valid] = np.maximum(
                depth[valid] + rng.normal(0.0, depth_noise, valid.sum()),
                1e-3)
        if corrupt_beyond is not None:
            far = valid & (depth > corrupt_beyond)
            depth[far] *= 1.0 + rng.uniform(0.1, max(corrupt_scale, 0.11),
                                            far.sum())
        frames.append(Frame(id=i, timestamp=i / fps,
                            color=np.clip(img.color, 0.0, 1.0), depth=depth,
                            intrinsics=scene.intrinsics))
    return frames, scene.gt_trajectory(n_frames, fps)
