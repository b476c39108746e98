import json
import logging

import numpy as np
import pytest
import torch

from orbit_recon.config.main import PhaseSchedule, PhotometricConfig, TrainConfig
from orbit_recon.geometry import CameraIntrinsics, Pose
from orbit_recon.neural import AnalyticField, RayDataset, render_image
from orbit_recon.photometric import (
    FrameParams,
    PhotometricModel,
    PhotometricParams,
    ResponseParams,
    evaluation_report,
    exposure_schedule,
    fit,
    forward_pipeline,
    gamma_increments,
    invert_crf,
    linearity_score,
    read_params,
    write_params,
    write_report,
)
from orbit_recon.photometric.params import apply_crf, vignette_gain

K = CameraIntrinsics(40.0, 16.0, 16.0, 32, 32)


def _gamma_params(gamma: float, n_frames: int = 3) -> PhotometricParams:
    params = PhotometricParams.identity(n_frames)
    params.response = ResponseParams(crf=np.tile(gamma_increments(gamma), (3, 1)))
    return params


def test_identity_chain():
    rng = np.random.default_rng(0)
    radiance = rng.uniform(0, 1, (10, 3))
    pixels = rng.uniform(0, 32, (10, 2))
    out = forward_pipeline(radiance, pixels, FrameParams(), ResponseParams(), K)
    np.testing.assert_allclose(out, radiance, atol=1e-12)
    assert PhotometricParams.identity(4).is_identity()


def test_exposure_doubles():
    radiance = np.full((1, 3), 0.2)
    out = forward_pipeline(radiance, np.array([[16.0, 16.0]]), FrameParams(1.0), ResponseParams(), K)
    np.testing.assert_allclose(out, 0.4, atol=1e-12)
    saturated = forward_pipeline(radiance, np.array([[16.0, 16.0]]), FrameParams(3.0), ResponseParams(), K)
    np.testing.assert_allclose(saturated, 1.0)


def test_vignette_gain():
    vignette = np.tile([-0.3, 0.0], (3, 1))
    np.testing.assert_allclose(vignette_gain(np.array([0.0, 1.0]), vignette), [[1.0] * 3, [0.7] * 3])
    # gains never go negative
    assert (vignette_gain(np.array([2.0]), vignette) == 0).all()


def test_invert_crf():
    increments = gamma_increments(2.2)
    assert invert_crf(increments, 0.0) == 0.0
    assert invert_crf(increments, 1.0) == 1.0
    values = np.linspace(0.05, 0.95, 7)
    np.testing.assert_allclose(invert_crf(increments, apply_crf(values, increments)), values, atol=1e-9)


def test_response_validation():
    with pytest.raises(ValueError, match="non-negative"):
        ResponseParams(crf=-np.ones((3, 8)))
    with pytest.raises(ValueError, match="colour matrices"):
        PhotometricParams(np.zeros(2), np.tile(np.eye(3), (3, 1, 1)))


def test_linearity_score():
    assert linearity_score(PhotometricParams.identity(2)) == pytest.approx(0.0, abs=1e-12)
    assert linearity_score(_gamma_params(2.2)) == pytest.approx(0.18, abs=0.015)


@pytest.mark.parametrize(
    "kind,n_frames,expected",
    [
        ("none", 3, [0.0, 0.0, 0.0]),
        ("sinusoid", 4, [0.0, 1.0, 0.0, -1.0]),
        ("ramp", 3, [-1.0, 0.0, 1.0]),
    ],
)
def test_exposure_schedule(kind, n_frames, expected):
    np.testing.assert_allclose(exposure_schedule(kind, n_frames, 1.0), expected, atol=1e-12)


def test_exposure_schedule_unknown():
    with pytest.raises(ValueError, match="unknown exposure schedule"):
        exposure_schedule("flicker", 3, 1.0)


def test_params_json(tmp_path):
    params = _gamma_params(2.2)
    params.exposure_ev = np.array([0.0, 0.5, -0.25])
    loaded = read_params(write_params(params, tmp_path / "photometric.json"))
    np.testing.assert_array_equal(loaded.exposure_ev, params.exposure_ev)
    np.testing.assert_array_equal(loaded.response.crf, params.response.crf)


def test_evaluation_report(tmp_path):
    params = _gamma_params(2.2)
    params.exposure_ev = np.array([0.0, 0.5, -0.25])
    truth = PhotometricParams.identity(3)
    truth.exposure_ev = np.array([1.0, 1.5, 0.75])
    report = evaluation_report(params, frame_ids=[0, 10, 20], ground_truth=truth)
    assert [row["frame"] for row in report["frames"]] == [0, 10, 20]
    assert [row["gt_exposure_ev"] for row in report["frames"]] == [0.0, 0.5, -0.25]
    assert report["exposure_range_ev"] == [-0.25, 0.5]
    assert not report["linear"]
    assert len(report["crf"]["red"]["values"]) == 17

    paths = write_report(report, tmp_path)
    assert [p.name for p in paths] == ["report.csv", "report.json", "report.md"]
    assert paths[0].read_text("utf8").splitlines()[0] == "frame,exposure_ev,ccm_deviation,gt_exposure_ev"
    assert json.loads(paths[1].read_text("utf8"))["linear"] is False
    markdown = paths[2].read_text("utf8")
    assert markdown.startswith("# Photometric report")
    assert "non-linear" in markdown
    assert "ground truth (EV)" in markdown


def test_evaluation_report_linear():
    report = evaluation_report(PhotometricParams.identity(2))
    assert report["linear"]
    assert all(row["gt_exposure_ev"] is None for row in report["frames"])


def test_model_starts_at_identity():
    model = PhotometricModel(3, K)
    radiance = torch.rand(20, 3, generator=torch.Generator().manual_seed(1))
    pixels = torch.rand(20, 2, generator=torch.Generator().manual_seed(2)) * 32
    frames = torch.tensor([0, 1, 2] * 6 + [1, 2])
    with torch.no_grad():
        out = model(radiance, pixels, frames)
    assert torch.allclose(out, radiance, atol=1e-5)
    params = model.to_params()
    assert (params.exposure_ev == 0).all()
    np.testing.assert_allclose(params.ccm, np.tile(np.eye(3), (3, 1, 1)))


def test_model_anchors_frame_zero():
    model = PhotometricModel(2, K)
    with torch.no_grad():
        model.exposure_ev.fill_(1.0)
        model.ccm.mul_(0.5)
    radiance = torch.full((2, 3), 0.25)
    pixels = torch.full((2, 2), 16.0)
    with torch.no_grad():
        out = model(radiance, pixels, torch.tensor([0, 1]))
    assert torch.allclose(out[0], torch.full((3,), 0.25), atol=1e-5)
    # a scaled colour matrix cannot dim grey, only the exposure moves it
    assert torch.allclose(out[1], torch.full((3,), 0.5), atol=1e-5)
    assert model.to_params().exposure_ev.tolist() == [0.0, 1.0]


def test_colour_matrices_keep_grey():
    model = PhotometricModel(3, K)
    with torch.no_grad():
        model.ccm.copy_(torch.randn(3, 3, 3, generator=torch.Generator().manual_seed(4)))
    matrices = model.colour_matrices()
    torch.testing.assert_close(matrices.sum(-1), torch.ones(3, 3))
    np.testing.assert_allclose(model.to_params().ccm[1:].sum(-1), 1.0, atol=1e-6)
    assert float(model.ccm_penalty()) > 0.0
    assert float(PhotometricModel(3, K).ccm_penalty()) == 0.0


def _banded_sphere(**kwargs) -> AnalyticField:
    """Grey sphere whose radiance runs from 0.05 to 0.45 with height."""
    return AnalyticField.sphere(
        0.5, color=lambda p: (0.05 + 0.4 * (p[:, 2:3] + 0.5).clamp(0.0, 1.0)).expand(-1, 3), **kwargs
    )


def _orbit(n_frames: int, radius: float = 2.0) -> list[Pose]:
    angles = np.linspace(0.0, 2 * np.pi, n_frames, endpoint=False)
    return [
        Pose.look_at((radius * np.cos(a), radius * np.sin(a), 0.3), np.zeros(3)) for a in angles
    ]


def test_fit_recovers_exposure_step():
    field = _banded_sphere()
    poses = _orbit(2)
    images = np.stack([render_image(field, pose, K)["image"] for pose in poses])
    images[1] = np.clip(images[1] * 2.0, 0.0, 1.0)
    data = RayDataset.from_frames(images.astype(np.float32), None, poses, K)
    result = fit(
        field,
        data,
        PhaseSchedule(phase1_iters=300, phase2_iters=100),
        PhotometricConfig(lr=0.02, rays_per_batch=256),
        K=K,
        train_config=TrainConfig(samples_per_ray=64),
    )
    assert result.params.exposure_ev[0] == 0.0
    assert result.params.exposure_ev[1] == pytest.approx(1.0, abs=0.1)
    assert [r["phase"] for r in result.history] == [1] * 300 + [2] * 100
    assert np.mean([r["loss"] for r in result.history[-20:]]) < np.mean(
        [r["loss"] for r in result.history[:20]]
    )


@pytest.mark.slow
def test_fit_tracks_exposure_sinusoid():
    field = _banded_sphere()
    poses = _orbit(20)
    truth = exposure_schedule("sinusoid", 20, 0.3)
    images = np.stack([render_image(field, pose, K)["image"] for pose in poses])
    images = np.clip(images * np.exp2(truth)[:, None, None, None], 0.0, 1.0)
    data = RayDataset.from_frames(images.astype(np.float32), None, poses, K)
    result = fit(field, data, K=K, train_config=TrainConfig(samples_per_ray=64))
    errors = np.abs(result.params.exposure_ev - truth)
    assert np.mean(errors <= 0.05) >= 0.9, errors.round(3).tolist()


def test_saturation_warning_ignores_sky(caplog):
    field = AnalyticField.sphere(0.5, color=0.3)
    poses = _orbit(2)
    images = np.stack([render_image(field, pose, K)["image"] for pose in poses]).astype(np.float32)
    schedule = PhaseSchedule(phase1_iters=1, phase2_iters=1)
    config = PhotometricConfig(rays_per_batch=8)
    with caplog.at_level(logging.WARNING):
        fit(field, RayDataset.from_frames(images, None, poses, K), schedule, config, K=K)
    # the black sky covers most of each frame and is not foreground
    assert "[orbit.saturation]" not in caplog.text

    clipped = np.clip(images * 4.0, 0.0, 1.0)
    with caplog.at_level(logging.WARNING):
        fit(field, RayDataset.from_frames(clipped, None, poses, K), schedule, config, K=K)
    assert caplog.text.count("[orbit.saturation]") == 1


def test_frozen_fit_leaves_geometry_untouched(sphere_dataset):
    from orbit_recon.meshing import marching_cubes, sample_grid
    from orbit_recon.neural import build_field

    train_config = TrainConfig(
        levels=2, min_resolution=4, max_resolution=8, log2_table_size=8, hidden_width=16, samples_per_ray=8
    )
    field = build_field(train_config, seed=1)
    with torch.no_grad():
        field.encoding.tables.normal_(0.0, 0.05)
    before = {name: value.clone() for name, value in field.state_dict().items()}
    mesh_before = marching_cubes(sample_grid(field, 24))
    data = RayDataset.from_frames(
        sphere_dataset.frames[:3], sphere_dataset.gt_masks[:3], sphere_dataset.gt_poses[:3], sphere_dataset.intrinsics
    )
    fit(
        field,
        data,
        PhaseSchedule(phase1_iters=5, phase2_iters=5),
        PhotometricConfig(cotrain=False, rays_per_batch=32),
        K=sphere_dataset.intrinsics,
        train_config=train_config,
    )
    for name, value in field.state_dict().items():
        assert torch.equal(value, before[name]), name
    mesh_after = marching_cubes(sample_grid(field, 24))
    np.testing.assert_array_equal(mesh_after.vertices, mesh_before.vertices)
