"""Shared fixtures: small cameras and datasets that render in well under a second."""

import pytest

from orbit_recon.geometry import CameraIntrinsics
from orbit_recon.scene.flyaround import TrajectorySpec, generate_flyaround
from orbit_recon.scene.primitives import get_preset


@pytest.fixture
def camera():
    """f = 100 px, principal point (50, 50) on a 100x100 image."""
    return CameraIntrinsics(100.0, 50.0, 50.0, 100, 100)


@pytest.fixture(scope="session")
def small_camera():
    return CameraIntrinsics.default_for(64, 48)


@pytest.fixture(scope="session")
def sphere_dataset(small_camera):
    """Twelve frames of the textured sphere on a black background."""
    return generate_flyaround(
        get_preset("sphere"), TrajectorySpec(12, radius=2.5), small_camera
    )
