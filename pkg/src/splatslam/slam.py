"""The sequential SLAM engine: per-frame tracking, densification, keyframe
selection, and map optimization, with constant-velocity fallback."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .datasets import Frame, Trajectory
from .errors import (
    DegenerateGeometry,
    EmptyMatchSet,
    InsufficientCorrespondences,
)
from .frontend import CorrespondenceProvider
from .gaussian_map import GaussianMap, KeyframePolicy, should_add_keyframe
from .geometry import Pose
from .mapper import MapperConfig, SamplingStrategy, densify, optimize_map, refine_colors
from .renderer import LossWeights
from .tracker import TrackerConfig, constant_velocity_predict, refine_pose, track_frame

logger = logging.getLogger(__name__)

TRACK_FAILURES = (InsufficientCorrespondences, DegenerateGeometry,
                  EmptyMatchSet)


@dataclass
class SlamResult:
    trajectory: Trajectory
    keyframe_trajectory: Trajectory
    gmap: GaussianMap
    track_ms: list[float]
    fallbacks: int
    keyframe_data: list[tuple[Frame, Pose]] = field(default_factory=list)


class SlamSystem:
    """Owns one run over a frame sequence. Tracking is strictly sequential
    (frame t depends on t-1); the map is single-writer throughout."""

    def __init__(
        self,
        tracker: TrackerConfig = TrackerConfig(),
        mapper: MapperConfig = MapperConfig(),
        keyframes: KeyframePolicy = KeyframePolicy(mode="sparse", k=5),
        weights: LossWeights = LossWeights(),
        sampling: SamplingStrategy = SamplingStrategy(),
        method: str = "feature",
        map_iters: int = 40,
        final_refine_iters: int = 50,
        seed: int = 0,
        initial_pose: Pose | None = None,
    ):
        if method not in ("feature", "constant_velocity"):
            raise ValueError("method must be 'feature' or 'constant_velocity'")
        self.tracker = tracker
        self.mapper = mapper
        self.keyframes = keyframes
        self.weights = weights
        self.sampling = sampling
        self.method = method
        self.map_iters = map_iters
        self.final_refine_iters = final_refine_iters
        self.seed = seed
        self.initial_pose = initial_pose or Pose.identity()

    def _predicted_pose(self, poses: list[Pose]) -> Pose:
        if len(poses) >= 2:
            return constant_velocity_predict(poses[-2], poses[-1])
        return poses[-1]

    def _refine_if_possible(self, init: Pose, frame: Frame,
                            gmap: GaussianMap) -> Pose:
        if self.tracker.refine_iters > 0 and len(gmap) > 0:
            return refine_pose(init, frame, gmap, frame.intrinsics,
                               self.tracker.refine_iters, self.weights,
                               self.tracker.step_scale)
        return init

    def process(self, frames, provider: CorrespondenceProvider | None = None
                ) -> SlamResult:
        gmap = GaussianMap()
        rng = np.random.default_rng(self.seed)
        poses: list[Pose] = []
        track_ms: list[float] = []
        fallbacks = 0
        keyframe_data: list[tuple[Frame, Pose]] = []
        entries: list[tuple[float, Pose]] = []
        kf_entries: list[tuple[float, Pose]] = []
        prev_frame: Frame | None = None

        for position, frame in enumerate(frames):
            t0 = time.perf_counter()
            if position == 0:
                pose = self.initial_pose
            elif self.method == "constant_velocity":
                pose = self._refine_if_possible(
                    self._predicted_pose(poses), frame, gmap)
            else:
                if provider is None:
                    raise ValueError("feature tracking needs a provider")
                try:
                    result = track_frame((prev_frame, poses[-1]), frame,
                                         provider, gmap, self.tracker,
                                         self.weights)
                    pose = result.pose
                except TRACK_FAILURES as exc:
                    fallbacks += 1
                    logger.warning(
                        "frame %d: %s; falling back to constant-velocity",
                        frame.id, exc)
                    pose = self._refine_if_possible(
                        self._predicted_pose(poses), frame, gmap)
            elapsed_ms = (time.perf_counter() - t0) * 1e3

            report = densify(gmap, frame, pose, frame.intrinsics, self.mapper)
            pose = report.pose

            if should_add_keyframe(self.keyframes, gmap, pose, position,
                                   frame.intrinsics):
                gmap.add_keyframe(frame.id, pose)
                keyframe_data.append((frame, pose))
                kf_entries.append((frame.timestamp, pose))
                if self.map_iters > 0 and len(gmap) > 0:
                    optimize_map(gmap, keyframe_data, self.map_iters,
                                 self.weights, rng=rng)

            poses.append(pose)
            track_ms.append(elapsed_ms)
            entries.append((frame.timestamp, pose))
            prev_frame = frame

        if self.final_refine_iters > 0 and keyframe_data and len(gmap) > 0:
            refine_colors(gmap, keyframe_data, self.final_refine_iters,
                          self.sampling, w=self.weights, rng=rng)

        return SlamResult(
            trajectory=Trajectory(entries),
            keyframe_trajectory=Trajectory(kf_entries),
            gmap=gmap,
            track_ms=track_ms,
            fallbacks=fallbacks,
            keyframe_data=keyframe_data,
        )
