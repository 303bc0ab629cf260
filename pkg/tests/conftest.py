import numpy as np
import pytest

from blurforge.scene import CameraIntrinsics, CameraPose


@pytest.fixture
def intr64():
    return CameraIntrinsics(64.0, 64.0, 32.0, 32.0, 64, 64)


@pytest.fixture
def orbit_pose():
    return CameraPose.look_at([0.3, -0.4, 3.0], [0.0, 0.0, 0.0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
