"""Frames, trajectories, and dataset IO (TUM RGB-D layout, PNG conventions).

Depth images follow the TUM convention: 16-bit PNG, 5000 counts per meter,
0 = no measurement. Trajectory text files are one pose per line,
``timestamp tx ty tz qx qy qz qw``.
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation

from .errors import DatasetError
from .geometry import CameraIntrinsics, Pose

logger = logging.getLogger(__name__)

DEPTH_SCALE = 5000.0  # counts per meter in 16-bit depth PNGs
ASSOCIATION_MAX_DT = 0.02  # seconds


@dataclass
class Frame:
    """One RGB-D observation: color in [0,1], depth in meters (0 = invalid)."""

    id: int
    timestamp: float
    color: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.color.shape != (h, w, 3):
            raise ValueError(f"color shape {self.color.shape} != ({h}, {w}, 3)")
        if self.depth.shape != (h, w):
            raise ValueError(f"depth shape {self.depth.shape} != ({h}, {w})")
        if self.color.min() < 0.0 or self.color.max() > 1.0:
            raise ValueError("color values must lie in [0, 1]")
        if self.depth.min() < 0.0 or not np.all(np.isfinite(self.depth)):
            raise ValueError("depth must be finite and non-negative")

    def depth_at(self, u: float, v: float) -> float:
        """Depth of the pixel containing the continuous coordinate (u, v)."""
        col = int(np.floor(u))
        row = int(np.floor(v))
        if not (0 <= col < self.intrinsics.width and 0 <= row < self.intrinsics.height):
            return 0.0
        return float(self.depth[row, col])


@dataclass
class Trajectory:
    """Ordered (timestamp, pose) sequence with strictly increasing stamps."""

    entries: list[tuple[float, Pose]] = field(default_factory=list)

    def __post_init__(self):
        ts = [t for t, _ in self.entries]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> tuple[float, Pose]:
        return self.entries[i]

    def append(self, timestamp: float, pose: Pose) -> None:
        if self.entries and timestamp <= self.entries[-1][0]:
            raise ValueError("timestamps must be strictly increasing")
        self.entries.append((float(timestamp), pose))

    def timestamps(self) -> np.ndarray:
        return np.array([t for t, _ in self.entries])

    def positions(self) -> np.ndarray:
        return np.array([p.translation for _, p in self.entries]).reshape(-1, 3)


def associate_timestamps(
    a: Sequence[float], b: Sequence[float], max_dt: float = ASSOCIATION_MAX_DT
) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp association: all candidate pairs within
    ``max_dt`` sorted by |dt|, consumed disjointly. Returns index pairs."""
    candidates = []
    for i, ta in enumerate(a):
        for j, tb in enumerate(b):
            dt = abs(ta - tb)
            if dt <= max_dt:
                candidates.append((dt, i, j))
    candidates.sort()
    used_a: set[int] = set()
    used_b: set[int] = set()
    pairs = []
    for _, i, j in candidates:
        if i not in used_a and j not in used_b:
            used_a.add(i)
            used_b.add(j)
            pairs.append((i, j))
    pairs.sort()
    return pairs


# ---------------------------------------------------------------------------
# Image IO


def save_color_png(path, color: np.ndarray) -> None:
    arr = np.clip(np.asarray(color) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_color_png(path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_depth_png(path, depth_m: np.ndarray) -> None:
    counts = np.clip(np.asarray(depth_m) * DEPTH_SCALE + 0.5, 0, 65535)
    Image.fromarray(counts.astype(np.uint16)).save(path)


def load_depth_png(path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype != np.uint16:
        raise DatasetError(f"{path}: depth PNG must be 16-bit, got {arr.dtype}")
    return arr.astype(np.float64) / DEPTH_SCALE


# ---------------------------------------------------------------------------
# Trajectory text format


def pose_to_tum_line(timestamp: float, pose: Pose) -> str:
    qx, qy, qz, qw = Rotation.from_matrix(pose.rotation).as_quat()
    tx, ty, tz = pose.translation
    return (
        f"{timestamp:.6f} {tx:.6f} {ty:.6f} {tz:.6f} "
        f"{qx:.6f} {qy:.6f} {qz:.6f} {qw:.6f}"
    )


def export_trajectory(trajectory: Trajectory, path) -> None:
    lines = [pose_to_tum_line(t, p) for t, p in trajectory.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path) -> Trajectory:
    entries = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(x) for x in line.split()]
        if len(vals) != 8:
            raise DatasetError(f"{path}: expected 8 fields per pose line")
        t, tx, ty, tz, qx, qy, qz, qw = vals
        q = np.array([qx, qy, qz, qw])
        norm = np.linalg.norm(q)
        if norm == 0:
            raise DatasetError(f"{path}: zero quaternion at t={t}")
        rot = Rotation.from_quat(q / norm).as_matrix()
        entries.append((t, Pose(rot, np.array([tx, ty, tz]))))
    return Trajectory(entries)


# ---------------------------------------------------------------------------
# TUM RGB-D directory layout


def _read_index(path: Path) -> list[tuple[float, str]]:
    if not path.exists():
        raise DatasetError(f"missing index file: {path}")
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        out.append((float(parts[0]), parts[1]))
    return out


def load_tum(
    directory,
    intrinsics: CameraIntrinsics | None = None,
    max_dt: float = ASSOCIATION_MAX_DT,
) -> tuple[list[Frame], Trajectory]:
    """Load a TUM-layout dataset directory into frames plus the ground-truth
    trajectory. RGB, depth, and ground truth are associated by nearest
    timestamp within ``max_dt``; frames missing either association are
    skipped (counted in a warning)."""
    directory = Path(directory)
    rgb_list = _read_index(directory / "rgb.txt")
    depth_list = _read_index(directory / "depth.txt")
    gt_path = directory / "groundtruth.txt"
    if not gt_path.exists():
        raise DatasetError(f"missing index file: {gt_path}")
    gt = load_trajectory(gt_path)

    rgb_ts = [t for t, _ in rgb_list]
    depth_ts = [t for t, _ in depth_list]
    gt_ts = list(gt.timestamps())

    rgb_to_depth = dict(associate_timestamps(rgb_ts, depth_ts, max_dt))
    rgb_to_gt = dict(associate_timestamps(rgb_ts, gt_ts, max_dt))

    if intrinsics is None:
        intrinsics = _default_tum_intrinsics(directory, rgb_list)

    frames: list[Frame] = []
    gt_entries: list[tuple[float, Pose]] = []
    skipped = 0
    for i, (t, rgb_rel) in enumerate(rgb_list):
        j = rgb_to_depth.get(i)
        k = rgb_to_gt.get(i)
        if j is None or k is None:
            skipped += 1
            continue
        color = load_color_png(directory / rgb_rel)
        depth = load_depth_png(directory / depth_list[j][1])
        frames.append(
            Frame(id=len(frames), timestamp=t, color=color, depth=depth,
                  intrinsics=intrinsics)
        )
        gt_entries.append((t, gt.entries[k][1]))
    if skipped:
        logger.warning("load_tum: skipped %d frames without associations", skipped)
    if not frames:
        raise DatasetError(f"{directory}: no associable frames")
    return frames, Trajectory(gt_entries)


def _default_tum_intrinsics(directory: Path, rgb_list) -> CameraIntrinsics:
    """Read intrinsics.txt (fx fy cx cy) if present, else the freiburg
    defaults sized from the first image."""
    with Image.open(directory / rgb_list[0][1]) as img:
        width, height = img.size
    intr_path = directory / "intrinsics.txt"
    if intr_path.exists():
        vals = [float(x) for x in intr_path.read_text().split()[:4]]
        fx, fy, cx, cy = vals
    else:
        fx, fy, cx, cy = 525.0, 525.0, width / 2.0, height / 2.0
    return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy,
                            width=width, height=height, near=0.1, far=10.0)


def write_tum(
    directory,
    frames: Iterable[Frame],
    gt: Trajectory,
    intrinsics: CameraIntrinsics | None = None,
) -> None:
    """Write frames + ground truth as a TUM-layout directory."""
    directory = Path(directory)
    (directory / "rgb").mkdir(parents=True, exist_ok=True)
    (directory / "depth").mkdir(parents=True, exist_ok=True)
    rgb_lines = []
    depth_lines = []
    for frame in frames:
        name = f"{frame.timestamp:.6f}.png"
        save_color_png(directory / "rgb" / name, frame.color)
        save_depth_png(directory / "depth" / name, frame.depth)
        rgb_lines.append(f"{frame.timestamp:.6f} rgb/{name}")
        depth_lines.append(f"{frame.timestamp:.6f} depth/{name}")
        if intrinsics is None:
            intrinsics = frame.intrinsics
    (directory / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (directory / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    export_trajectory(gt, directory / "groundtruth.txt")
    if intrinsics is not None:
        (directory / "intrinsics.txt").write_text(
            f"{intrinsics.fx} {intrinsics.fy} {intrinsics.cx} {intrinsics.cy}\n"
        )


# ---------------------------------------------------------------------------
# Prefetching


def prefetch_frames(frames: Iterable[Frame], capacity: int) -> Iterator[Frame]:
    """Iterate frames through a background thread and a bounded queue,
    preserving order. ``capacity`` <= 0 iterates inline."""
    if capacity <= 0:
        yield from frames
        return
    q: queue.Queue = queue.Queue(maxsize=capacity)
    sentinel = object()

    def worker():
        for f in frames:
            q.put(f)
        q.put(sentinel)

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    while True:
        item = q.get()
        if item is sentinel:
            break
        yield item
    thread.join()
