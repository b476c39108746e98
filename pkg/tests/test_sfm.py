import logging
import time

import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.linalg import spsolve

from orbit_recon.config.main import SfmConfig
from orbit_recon.errors import InsufficientData
from orbit_recon.geometry import (
    CameraIntrinsics,
    Pose,
    angle_between_deg,
    project_points,
    rotation_angle_deg,
    skew,
)
from orbit_recon.scene.flyaround import TrajectorySpec, generate_flyaround
from orbit_recon.scene.primitives import get_preset
from orbit_recon.sfm import (
    Correspondences,
    Reconstruction,
    Track,
    align_sim3,
    build_correspondences,
    build_tracks,
    bundle,
    bundle_adjust,
    bundle_adjust_with_report,
    bundle_cost,
    estimate_two_view,
    load_reconstruction,
    register_pnp,
    run_incremental_sfm,
    save_reconstruction,
    window_pairs,
)
from orbit_recon.sfm.correspondences import weak_frames

K = CameraIntrinsics(250.0, 160.0, 120.0, 320, 240)


def _orbit_poses(angles_deg, radius=3.0, height=0.4):
    angles = np.radians(angles_deg)
    return [
        Pose.look_at((radius * np.cos(a), radius * np.sin(a), height), np.zeros(3))
        for a in angles
    ]


def _cloud(n, seed=0):
    return np.random.default_rng(seed).uniform(-0.5, 0.5, size=(n, 3))


def _relative(pose_a: Pose, pose_b: Pose) -> Pose:
    return pose_b.compose(pose_a.inverse())


def test_window_pairs():
    assert window_pairs([0, 1, 2], 1) == [(0, 1), (1, 2)]
    assert window_pairs([0, 1, 2], 30) == [(0, 1), (0, 2), (1, 2)]
    assert all(j - i <= 30 for i, j in window_pairs(range(100), 30))
    with pytest.raises(ValueError):
        window_pairs([0, 1], 0)


def test_correspondences_reject_pairs_outside_window():
    keypoints = {0: np.zeros((1, 2)), 5: np.zeros((1, 2))}
    with pytest.raises(ValueError, match="outside the matching window"):
        Correspondences(keypoints, {(0, 5): np.zeros((1, 2), int)}, "synthetic", 3)


def test_build_correspondences_validation(sphere_dataset):
    with pytest.raises(ValueError, match="window"):
        build_correspondences(sphere_dataset, window=0)
    with pytest.raises(TypeError):
        build_correspondences(sphere_dataset.frames, mode="synthetic")
    with pytest.raises(ValueError, match="unknown correspondence mode"):
        build_correspondences(sphere_dataset, mode="sift")


def test_synthetic_correspondences_are_epipolar(sphere_dataset):
    corr = build_correspondences(sphere_dataset, window=2, mode="synthetic", noise_px=0.0)
    assert corr.provenance == "synthetic"
    assert set(corr.matches) == set(window_pairs(range(12), 2))
    K_data = sphere_dataset.intrinsics
    for (i, j) in corr.matches:
        if j - i == 1:
            assert corr.n_matches(i, j) >= 50
        relative = _relative(sphere_dataset.gt_poses[i], sphere_dataset.gt_poses[j])
        E = skew(relative.translation) @ relative.R
        xi, xj = corr.pixel_pairs(i, j)
        hi = np.column_stack([K_data.normalize(xi), np.ones(len(xi))])
        hj = np.column_stack([K_data.normalize(xj), np.ones(len(xj))])
        residual = np.abs(np.einsum("ni,ij,nj->n", hj, E, hi))
        assert residual.max() < 1e-6


def test_build_tracks_one_observation_per_frame(sphere_dataset):
    corr = build_correspondences(sphere_dataset, window=3, mode="synthetic")
    tracks = build_tracks(corr)
    assert tracks
    assert all(len(track) >= 2 for track in tracks)
    assert all(len(set(track.observations)) == len(track) for track in tracks)


def test_build_tracks_chains_three_frames():
    keypoints = {frame: np.array([[10.0 + frame, 20.0], [30.0, 40.0 + frame]]) for frame in range(3)}
    matches = {(0, 1): np.array([[0, 1], [1, 0]]), (1, 2): np.array([[0, 1]])}
    tracks = build_tracks(Correspondences(keypoints, matches, "detected", 2))
    assert [sorted(track.observations) for track in tracks] == [[0, 1], [0, 1, 2]]
    np.testing.assert_array_equal(tracks[1].observations[2], keypoints[2][1])


def test_build_tracks_drops_frame_conflicts():
    keypoints = {frame: np.zeros((2, 2)) for frame in range(3)}
    matches = {
        (0, 1): np.array([[0, 0]]),
        (1, 2): np.array([[0, 0]]),
        (0, 2): np.array([[1, 0]]),
    }
    assert build_tracks(Correspondences(keypoints, matches, "detected", 2)) == []


def test_weak_frames():
    keypoints = {frame: np.zeros((20, 2)) for frame in range(3)}
    index = np.tile(np.arange(20)[:, None], (1, 2))
    matches = {(0, 1): index, (1, 2): index[:3], (0, 2): index[:5]}
    corr = Correspondences(keypoints, matches, "synthetic", 2)
    assert weak_frames(corr, 8) == [2]
    assert weak_frames(corr, 3) == []


def test_correspondence_warning(sphere_dataset, caplog):
    with caplog.at_level(logging.WARNING):
        build_correspondences(sphere_dataset, window=1, min_matches=10**6)
    assert caplog.text.count("[orbit.correspondences]") == 12
    caplog.clear()
    with caplog.at_level(logging.WARNING):
        build_correspondences(
            sphere_dataset, window=1, min_matches=10**6, suppress_warnings=["orbit.correspondences"]
        )
    assert "[orbit.correspondences]" not in caplog.text


def test_detected_correspondences_on_textured_frames(small_camera):
    dataset = generate_flyaround(
        get_preset("station"), TrajectorySpec(3, jitter_deg=0.0), small_camera
    )
    corr = build_correspondences(dataset, window=1, mode="detected")
    assert corr.provenance == "detected"
    assert set(corr.matches) == {(0, 1), (1, 2)}
    for i, j in corr.matches:
        xi, xj = corr.pixel_pairs(i, j)
        assert small_camera.in_bounds(xi).all() and small_camera.in_bounds(xj).all()


def test_two_view_exact():
    pose_a, pose_b = _orbit_poses([0.0, 30.0])
    points = _cloud(100)
    x1, _ = project_points(points, pose_a, K)
    x2, _ = project_points(points, pose_b, K)
    result = estimate_two_view(x1, x2, K, seed=1)
    truth = _relative(pose_a, pose_b)
    assert np.linalg.norm(result.pose.translation) == pytest.approx(1.0, abs=1e-12)
    assert rotation_angle_deg(result.pose.R @ truth.R.T) < 0.05
    assert angle_between_deg(result.pose.translation, truth.translation) < 0.1
    assert result.inliers.all()
    assert result.cheirality_fraction >= 0.5


def test_two_view_with_outliers():
    rng = np.random.default_rng(2)
    pose_a, pose_b = _orbit_poses([0.0, 30.0])
    points = _cloud(200, seed=3)
    x1, _ = project_points(points, pose_a, K)
    x2, _ = project_points(points, pose_b, K)
    outliers = rng.choice(200, size=60, replace=False)
    x2[outliers] = rng.uniform([0, 0], [K.width, K.height], size=(60, 2))
    result = estimate_two_view(x1, x2, K, seed=4)
    truth = np.ones(200, bool)
    truth[outliers] = False
    precision = (result.inliers & truth).sum() / result.inliers.sum()
    assert precision >= 0.95


def test_two_view_too_few_matches():
    x = np.zeros((7, 2))
    with pytest.raises(InsufficientData, match="8 matches"):
        estimate_two_view(x, x, K)


def test_pnp_exact():
    pose = _orbit_poses([40.0])[0]
    points = _cloud(100, seed=5)
    pixels, _ = project_points(points, pose, K)
    result = register_pnp(points, pixels, K, seed=0)
    assert rotation_angle_deg(result.pose.R @ pose.R.T) < 0.01
    assert np.linalg.norm(result.pose.translation - pose.translation) < 1e-4
    assert result.mean_error_px < 1e-6


def test_pnp_noisy():
    rng = np.random.default_rng(6)
    pose = _orbit_poses([-20.0])[0]
    points = _cloud(100, seed=7)
    pixels, _ = project_points(points, pose, K)
    result = register_pnp(points, pixels + rng.normal(0, 0.5, pixels.shape), K)
    assert rotation_angle_deg(result.pose.R @ pose.R.T) < 0.2
    assert result.mean_error_px <= 2.0


def test_pnp_too_few_correspondences():
    with pytest.raises(InsufficientData, match="6 correspondences"):
        register_pnp(np.zeros((5, 3)), np.zeros((5, 2)), K)


def _scene_reconstruction(noise_px: float, n_frames=10, n_points=100, seed=8):
    rng = np.random.default_rng(seed)
    poses = _orbit_poses(np.linspace(0.0, 60.0, n_frames))
    points = _cloud(n_points, seed=seed)
    tracks = []
    for point in points:
        observations = {}
        for frame, pose in enumerate(poses):
            pixel, _ = project_points(point[None], pose, K)
            observations[frame] = pixel[0] + rng.normal(0, noise_px, 2)
        tracks.append(Track(observations))
    return Reconstruction(
        K,
        tracks,
        poses=dict(enumerate(poses)),
        points=dict(enumerate(points)),
        frames=list(range(n_frames)),
        reference_frame=0,
        baseline_frame=1,
    )


def test_bundle_adjust_noisy():
    recon = _scene_reconstruction(0.3)
    adjusted, report = bundle_adjust_with_report(recon)
    assert not report.diverged
    assert bundle_cost(adjusted) <= bundle_cost(recon)
    assert 0.15 <= adjusted.mean_reprojection_error() <= 0.45
    assert adjusted.poses[0].is_close(recon.poses[0], atol=0)
    baseline = np.linalg.norm(adjusted.poses[1].center - adjusted.poses[0].center)
    assert baseline == pytest.approx(
        np.linalg.norm(recon.poses[1].center - recon.poses[0].center), rel=1e-9
    )


def test_bundle_adjust_fixed_point():
    recon = _scene_reconstruction(0.0)
    _, report = bundle_adjust_with_report(recon)
    assert report.final_cost <= report.initial_cost
    assert report.initial_cost - report.final_cost < 1e-12


def test_bundle_adjust_refines_focal():
    recon = _scene_reconstruction(0.1)
    recon.intrinsics = K.copy(focal_px=240.0)
    adjusted = bundle_adjust(recon, fix_intrinsics=False)
    assert adjusted.intrinsics.focal_px != 240.0
    assert bundle_cost(adjusted) < bundle_cost(recon)


def test_bundle_adjust_refines_principal_point_on_request():
    recon = _scene_reconstruction(0.1)
    recon.intrinsics = K.copy(focal_px=240.0, cx=163.0)
    focal_only = bundle_adjust(recon, fix_intrinsics=False)
    assert (focal_only.intrinsics.cx, focal_only.intrinsics.cy) == (163.0, K.cy)
    full = bundle_adjust(recon, fix_intrinsics=False, refine_principal_point=True)
    assert full.intrinsics.cx != 163.0
    assert bundle_cost(full) <= bundle_cost(focal_only)


def test_reduced_camera_system_matches_direct_solve():
    recon = _scene_reconstruction(0.3, n_frames=5, n_points=40)
    problem = bundle._Problem(recon, {1, 2, 3, 4}, bundle.FOCAL)
    J, r = problem.linearize(problem.state, 2.0)
    H = (J.T @ J).tocsr()
    damped = H + sparse.diags(1e-3 * H.diagonal() + 1e-12)
    expected = spsolve(damped.tocsc(), -(J.T @ r))
    np.testing.assert_allclose(problem.solve(H, -(J.T @ r), 1e-3), expected, rtol=1e-6, atol=1e-9)


def test_bundle_adjust_reports_divergence(monkeypatch, caplog):
    def overshoot(self, state, step):
        new = state.copy()
        new.points = state.points + 0.2
        return new

    recon = _scene_reconstruction(0.3)
    monkeypatch.setattr(bundle._Problem, "apply", overshoot)
    with caplog.at_level(logging.WARNING):
        adjusted, report = bundle_adjust_with_report(recon)
    assert report.diverged
    assert report.accepted_steps == 0
    assert caplog.text.count("[orbit.ba_divergence]") == 1
    assert "5 consecutive steps" in caplog.text
    assert all(adjusted.poses[f].is_close(recon.poses[f], atol=1e-9) for f in recon.poses)


def _exact_correspondences(poses, points, window):
    keypoints = {frame: project_points(points, pose, K)[0] for frame, pose in enumerate(poses)}
    index = np.arange(len(points))
    matches = {pair: np.stack([index, index], axis=1) for pair in window_pairs(range(len(poses)), window)}
    return Correspondences(keypoints, matches, "synthetic", window)


def test_incremental_two_frames():
    corr = _exact_correspondences(_orbit_poses([0.0, 20.0]), _cloud(80, seed=9), 1)
    recon = run_incremental_sfm(corr, K, SfmConfig(refine_intrinsics=False))
    assert sorted(recon.poses) == [0, 1]
    stats = recon.stats()
    assert stats["sparse_points"] >= 70
    assert stats["mean_reprojection_error_px"] < 1.0
    assert stats["estimated_dimensions"] == [2 * K.cx, 2 * K.cy]


def test_incremental_registers_all_frames(sphere_dataset):
    corr = build_correspondences(sphere_dataset, window=30, mode="synthetic", noise_px=0.3)
    recon = run_incremental_sfm(corr, sphere_dataset.intrinsics, SfmConfig())
    assert len(recon.poses) == 12
    # the final adjustment refines the focal length only
    assert (recon.intrinsics.cx, recon.intrinsics.cy) == (
        sphere_dataset.intrinsics.cx,
        sphere_dataset.intrinsics.cy,
    )
    assert not recon.unregistered
    _, _, errors, depths = recon.residuals()
    assert np.all(depths > 0)
    assert errors.max() <= SfmConfig().prune_threshold_px
    alignment = align_sim3(recon.poses, sphere_dataset.gt_poses)
    assert alignment.rotation_errors_deg.mean() < 1.0
    assert alignment.translation_errors.mean() < 0.05


def test_incremental_is_deterministic():
    corr = _exact_correspondences(_orbit_poses([0.0, 15.0, 30.0, 45.0]), _cloud(60, seed=10), 3)
    first = run_incremental_sfm(corr, K)
    second = run_incremental_sfm(corr, K)
    for frame in first.poses:
        np.testing.assert_array_equal(first.poses[frame].matrix(), second.poses[frame].matrix())


def test_incremental_needs_two_frames():
    corr = Correspondences({0: np.zeros((3, 2))}, {}, "synthetic", 1)
    with pytest.raises(InsufficientData):
        run_incremental_sfm(corr, K)


def _similarity(poses, scale, rotation, translation):
    """Poses as seen in a frame related by ``x = scale * rotation @ x' + translation``."""
    out = {}
    for frame, pose in enumerate(poses):
        centre = rotation.T @ (pose.center - translation) / scale
        out[frame] = Pose.from_center(pose.R @ rotation, centre)
    return out


def test_align_sim3_exact():
    gt = TrajectorySpec(20, jitter_seed=1).poses()
    rotation = Pose(np.array([0.3, -0.2, 0.9, 0.1]), np.zeros(3)).R
    est = _similarity(gt, 0.37, rotation, np.array([1.0, -2.0, 0.5]))
    alignment = align_sim3(est, gt)
    assert alignment.scale == pytest.approx(0.37)
    assert alignment.rotation_errors_deg.max() < 1e-6
    assert alignment.translation_errors.max() < 1e-9
    assert not alignment.degenerate


def test_align_sim3_jitter():
    rng = np.random.default_rng(11)
    gt = TrajectorySpec(60, jitter_seed=2).poses()
    directions = rng.normal(size=(60, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    est = {i: Pose.from_center(p.R, p.center + 0.001 * d) for i, (p, d) in enumerate(zip(gt, directions))}
    alignment = align_sim3(est, gt)
    assert 0.0008 <= alignment.translation_errors.mean() <= 0.0011


def test_align_sim3_collinear(caplog):
    poses = [Pose.from_center(np.eye(3), (float(k), 0.0, 0.0)) for k in range(3)]
    with caplog.at_level(logging.WARNING):
        alignment = align_sim3(dict(enumerate(poses)), poses)
    assert alignment.degenerate
    assert "[orbit.degenerate_alignment]" in caplog.text
    assert alignment.translation_errors.max() < 1e-9


def test_align_sim3_too_few_frames():
    poses = TrajectorySpec(2).poses()
    with pytest.raises(InsufficientData, match="3 common frames"):
        align_sim3(dict(enumerate(poses)), poses)


def test_save_load_reconstruction(tmp_path):
    recon = bundle_adjust(_scene_reconstruction(0.2, n_frames=4, n_points=30))
    recon.unregistered[7] = "no keypoints"
    save_reconstruction(recon, tmp_path)
    loaded = load_reconstruction(tmp_path)
    assert sorted(loaded.poses) == sorted(recon.poses)
    for frame in recon.poses:
        assert loaded.poses[frame].is_close(recon.poses[frame], atol=1e-12)
    np.testing.assert_allclose(loaded.point_array(), recon.point_array(), atol=1e-6)
    assert loaded.unregistered == {7: "no keypoints"}
    assert (tmp_path / "stats.json").exists()


@pytest.mark.slow
def test_sixty_frame_flyaround():
    dataset = generate_flyaround(
        get_preset("rocket-body"), TrajectorySpec(60), CameraIntrinsics.default_for(160, 120)
    )
    start = time.perf_counter()
    corr = build_correspondences(dataset, window=30, mode="synthetic", noise_px=0.3)
    recon = run_incremental_sfm(corr, CameraIntrinsics.default_for(160, 120))
    assert time.perf_counter() - start < 300
    stats = recon.stats()
    assert stats["registered_frames"] == 60
    assert 0.15 <= stats["mean_reprojection_error_px"] <= 0.45
    alignment = align_sim3(recon.poses, dataset.gt_poses)
    assert alignment.rotation_errors_deg.mean() < 0.5
    assert alignment.translation_errors.mean() < 0.01 * 2.5
