import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from splatslam.geometry import CameraIntrinsics, Pose


@pytest.fixture
def intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=100.0, fy=100.0, cx=320.0, cy=240.0, width=640, height=480,
        near=0.1, far=10.0,
    )


@pytest.fixture
def small_intrinsics() -> CameraIntrinsics:
    """64x64 camera used for rendering-heavy tests."""
    return CameraIntrinsics(
        fx=70.0, fy=70.0, cx=32.0, cy=32.0, width=64, height=64,
        near=0.1, far=20.0,
    )


def random_pose(rng: np.random.Generator, max_translation: float = 1.0) -> Pose:
    r = Rotation.random(random_state=np.random.RandomState(rng.integers(2**31)))
    t = rng.uniform(-max_translation, max_translation, size=3)
    return Pose(r.as_matrix(), t)


def rot_z(deg: float) -> np.ndarray:
    return Rotation.from_euler("z", deg, degrees=True).as_matrix()


def rot_axis(axis, deg: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return Rotation.from_rotvec(np.deg2rad(deg) * axis).as_matrix()
