import numpy as np
import pytest

from orbit_recon.errors import BehindCamera, DegenerateGeometry, InsufficientData
from orbit_recon.geometry import (
    CameraIntrinsics,
    Normalization,
    Pose,
    backproject_depth,
    project,
    project_points,
    rotation_angle_deg,
    triangulate,
    triangulate_pairs,
    unproject,
)


def _random_pose(rng) -> Pose:
    quat = rng.normal(size=4)
    return Pose(quat, rng.normal(size=3))


@pytest.mark.parametrize(
    "point,expected",
    [((0.0, 0.0, 3.0), (50.0, 50.0)), ((1.0, 0.0, 2.0), (100.0, 50.0))],
)
def test_project(camera, point, expected):
    np.testing.assert_allclose(project(point, Pose.identity(), camera), expected)


def test_project_behind_camera(camera):
    with pytest.raises(BehindCamera):
        project((0.0, 0.0, -1.0), Pose.identity(), camera)


def test_project_rejects_non_finite(camera):
    with pytest.raises(ValueError, match="finite"):
        project((np.nan, 0.0, 1.0), Pose.identity(), camera)


def test_project_points_marks_points_behind(camera):
    pixels, depth = project_points(
        np.array([[0.0, 0.0, 2.0], [0.0, 0.0, -2.0]]), Pose.identity(), camera
    )
    np.testing.assert_allclose(pixels[0], (50.0, 50.0))
    assert np.all(np.isnan(pixels[1]))
    np.testing.assert_allclose(depth, (2.0, -2.0))


def test_unproject_principal_point(camera):
    ray = unproject((50.0, 50.0), Pose.identity(), camera)
    np.testing.assert_allclose(ray.origin, 0.0)
    np.testing.assert_allclose(ray.direction, (0.0, 0.0, 1.0))


def test_unproject_out_of_bounds(camera):
    with pytest.raises(ValueError, match="outside"):
        unproject((-1.0, 0.0), Pose.identity(), camera)


def test_project_unproject_round_trip(camera):
    rng = np.random.default_rng(0)
    pose = _random_pose(rng)
    pixels = rng.uniform(0, 100, size=(1000, 2))
    for pixel in pixels:
        ray = unproject(pixel, pose, camera)
        for t in (0.5, 1.0, 3.0, 10.0):
            assert np.abs(project(ray.at(t), pose, camera) - pixel).max() < 1e-6


def test_backproject_depth_inverts_projection(camera):
    rng = np.random.default_rng(1)
    pose = _random_pose(rng)
    pixels = rng.uniform(0, 100, size=(50, 2))
    depth = rng.uniform(1.0, 5.0, size=50)
    points = backproject_depth(pixels, depth, pose, camera)
    reprojected, depth_again = project_points(points, pose, camera)
    np.testing.assert_allclose(reprojected, pixels, atol=1e-9)
    np.testing.assert_allclose(depth_again, depth, atol=1e-12)


def test_pose_group_laws():
    rng = np.random.default_rng(2)
    a, b, c = (_random_pose(rng) for _ in range(3))
    assert a.compose(a.inverse()).is_close(Pose.identity())
    assert a.inverse().inverse().is_close(a)
    assert a.compose(b).compose(c).is_close(a.compose(b.compose(c)))
    assert abs(np.linalg.norm(a.quaternion) - 1) < 1e-9


def test_pose_look_at():
    pose = Pose.look_at((3.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    np.testing.assert_allclose(pose.center, (3.0, 0.0, 0.0), atol=1e-12)
    np.testing.assert_allclose(pose.apply(np.zeros(3)), (0.0, 0.0, 3.0), atol=1e-12)


def test_pose_record_round_trip():
    pose = _random_pose(np.random.default_rng(3))
    assert Pose.from_record(pose.as_record()).is_close(pose, atol=1e-12)


def test_intrinsics_validation():
    with pytest.raises(ValueError, match="focal_px"):
        CameraIntrinsics(0.0, 10.0, 10.0, 20, 20)
    with pytest.raises(ValueError, match="principal point"):
        CameraIntrinsics(10.0, 30.0, 10.0, 20, 20)
    K = CameraIntrinsics.default_for(160, 120)
    assert (K.focal_px, K.cx, K.cy) == (192.0, 80.0, 60.0)


def _two_views(angle_deg: float):
    angle = np.radians(angle_deg)
    return (
        Pose.look_at((3.0, 0.0, 0.0), np.zeros(3)),
        Pose.look_at((3.0 * np.cos(angle), 3.0 * np.sin(angle), 0.0), np.zeros(3)),
    )


def test_triangulate_exact(camera):
    point = np.array([0.1, 0.2, -0.1])
    poses = _two_views(30.0)
    observations = [(pose, camera, project(point, pose, camera)) for pose in poses]
    np.testing.assert_allclose(triangulate(observations), point, atol=1e-7)


@pytest.mark.parametrize("angle", [5.0, 10.0, 45.0])
def test_triangulate_small_baselines(camera, angle):
    point = np.array([-0.2, 0.05, 0.3])
    poses = _two_views(angle)
    observations = [(pose, camera, project(point, pose, camera)) for pose in poses]
    np.testing.assert_allclose(triangulate(observations), point, atol=1e-6)


def test_triangulate_zero_baseline(camera):
    pose = Pose.look_at((3.0, 0.0, 0.0), np.zeros(3))
    with pytest.raises(DegenerateGeometry):
        triangulate([(pose, camera, (40.0, 45.0)), (pose, camera, (40.0, 45.0))])


def test_triangulate_single_observation(camera):
    with pytest.raises(InsufficientData):
        triangulate([(Pose.identity(), camera, (50.0, 50.0))])


def test_triangulate_noisy_rmse(camera):
    rng = np.random.default_rng(4)
    sigma = 0.5
    angles = np.radians([0.0, 10.0, 20.0, 30.0, 40.0])
    poses = [
        Pose.look_at((3.0 * np.cos(a), 3.0 * np.sin(a), 0.5), np.zeros(3)) for a in angles
    ]
    errors = []
    for _ in range(100):
        point = rng.uniform(-0.3, 0.3, size=3)
        observations = [
            (pose, camera, project(point, pose, camera) + rng.normal(0, sigma, 2))
            for pose in poses
        ]
        estimate = triangulate(observations)
        errors.extend(
            np.sum((project(estimate, pose, camera) - pixel) ** 2)
            for pose, _, pixel in observations
        )
    assert np.sqrt(np.mean(errors) / 2) <= 1.5 * sigma


def test_triangulate_pairs_matches_single(camera):
    rng = np.random.default_rng(5)
    points = rng.uniform(-0.4, 0.4, size=(20, 3))
    pose_a, pose_b = _two_views(20.0)
    xa = camera.normalize(project_points(points, pose_a, camera)[0])
    xb = camera.normalize(project_points(points, pose_b, camera)[0])
    np.testing.assert_allclose(triangulate_pairs(pose_a, pose_b, xa, xb), points, atol=1e-9)


def test_rotation_angle():
    pose = Pose.look_at((0.0, 3.0, 0.0), np.zeros(3))
    reference = Pose.look_at((3.0, 0.0, 0.0), np.zeros(3))
    assert rotation_angle_deg(pose.R @ reference.R.T) == pytest.approx(90.0)


def test_normalization_fit():
    rng = np.random.default_rng(6)
    points = rng.normal(size=(2000, 3)) * 4.0 + np.array([10.0, -3.0, 2.0])
    norm = Normalization.fit(points)
    mapped = norm.apply(points)
    assert np.quantile(np.linalg.norm(mapped, axis=1), 0.98) == pytest.approx(0.8, rel=0.05)
    np.testing.assert_allclose(norm.invert(mapped), points, atol=1e-9)
    pose = Pose.look_at((20.0, -3.0, 2.0), (10.0, -3.0, 2.0))
    assert norm.invert_pose(norm.apply_pose(pose)).is_close(pose)
