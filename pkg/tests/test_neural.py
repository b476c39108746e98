import math

import numpy as np
import pytest
import torch

from orbit_recon.config.main import TrainConfig
from orbit_recon.errors import InsufficientData, TrainingDiverged
from orbit_recon.neural import (
    AnalyticField,
    HashGridEncoding,
    RayDataset,
    SdfField,
    build_field,
    encode,
    level_resolutions,
    load_checkpoint,
    read_loss_history,
    render_rays,
    save_checkpoint,
    train,
    write_loss_history,
)
from orbit_recon.neural.checkpoint import read_header
from orbit_recon.neural.encoding import interpolation_weights
from orbit_recon.neural.train import active_levels_at, check_finite, cosine_factor

TINY = dict(
    levels=2,
    min_resolution=4,
    max_resolution=8,
    log2_table_size=8,
    hidden_width=16,
    rays_per_batch=32,
    samples_per_ray=8,
)


def test_level_resolutions():
    resolutions = level_resolutions(8, 16, 256)
    assert resolutions[0] == 16
    assert resolutions[-1] in (255, 256)
    assert all(b > a for a, b in zip(resolutions, resolutions[1:]))
    assert level_resolutions(1, 16, 256) == [16]


def test_interpolation_weights_sum_to_one():
    encoding = HashGridEncoding(levels=3, min_resolution=4, max_resolution=16)
    points = torch.rand(200, 3, generator=torch.Generator().manual_seed(0)) * 2 - 1
    for level in range(3):
        weights = interpolation_weights(encoding, points, level)
        assert weights.shape == (200, 8)
        assert (weights >= 0).all()
        assert torch.allclose(weights.sum(-1), torch.ones(200), atol=1e-5)


def test_grid_vertex_reads_table_entry():
    encoding = HashGridEncoding(levels=1, min_resolution=4, max_resolution=8, log2_table_size=8)
    assert encoding.dense == [True]
    # unit coordinates (1/4, 2/4, 3/4) land on lattice vertex (1, 2, 3)
    point = torch.tensor([[-0.5, 0.0, 0.5]])
    features, clamped = encode(encoding, point)
    row = 1 + 5 * (2 + 5 * 3)
    assert torch.allclose(features[0], encoding.tables[0, row])
    assert not clamped.any()


def test_inactive_levels_are_zero():
    encoding = HashGridEncoding(levels=2, min_resolution=4, max_resolution=8)
    points = torch.tensor([[0.1, -0.2, 0.3], [2.0, 0.0, 0.0]])
    features, clamped = encode(encoding, points, active_levels=0)
    assert (features == 0).all()
    assert clamped.tolist() == [False, True]
    features, _ = encode(encoding, points, active_levels=1)
    assert (features[:, 2:] == 0).all()
    with pytest.raises(ValueError, match="active_levels"):
        encode(encoding, points, active_levels=3)


def test_hashed_levels_stay_in_table():
    encoding = HashGridEncoding(levels=2, min_resolution=16, max_resolution=64, log2_table_size=6)
    assert encoding.dense == [False, False]
    vertices = torch.randint(0, 65, (500, 3), generator=torch.Generator().manual_seed(1))
    rows = encoding.vertex_index(1, vertices)
    assert int(rows.min()) >= 0 and int(rows.max()) < 64


def test_untrained_field_is_sphere_prior():
    field = SdfField(levels=2, min_resolution=4, max_resolution=8, log2_table_size=8, hidden_width=16)
    points = torch.rand(100, 3, generator=torch.Generator().manual_seed(2)) * 2 - 1
    with torch.no_grad():
        sdf = field.sdf(points)
    assert torch.allclose(sdf, points.norm(dim=-1) - 0.5, atol=1e-6)


def test_same_seed_same_field():
    a = build_field(TrainConfig(**TINY), seed=3)
    b = build_field(TrainConfig(**TINY), seed=3)
    for (name, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(x, y), name


def test_render_analytic_sphere():
    field = AnalyticField.sphere(0.5, color=0.7, sharpness=200.0)
    origins = torch.tensor([[0.0, 0.0, -2.0], [0.0, 0.0, -2.0]])
    directions = torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    bundle = render_rays(field, origins, directions, n_samples=256)
    assert bundle["inside"].tolist() == [True, False]
    assert float(bundle["opacity"][0]) > 0.99
    assert torch.allclose(bundle["rgb"][0], torch.full((3,), 0.7), atol=0.01)
    assert float(bundle["depth"][0]) == pytest.approx(1.5, abs=0.02)
    # a miss renders black with zero opacity and zero depth
    assert float(bundle["opacity"][1]) == 0.0
    assert (bundle["rgb"][1] == 0).all()
    assert float(bundle["depth"][1]) == 0.0


def test_render_rays_needs_two_samples():
    field = AnalyticField.sphere()
    with pytest.raises(ValueError, match="n_samples"):
        render_rays(field, torch.zeros(1, 3), torch.tensor([[0.0, 0.0, 1.0]]), n_samples=1)


def test_analytic_gradient_is_unit():
    field = AnalyticField.sphere(0.5)
    points = torch.tensor([[0.8, 0.0, 0.0], [0.0, -0.3, 0.4]], dtype=torch.float64)
    _, gradient, _ = field.sdf_and_gradient(points)
    assert torch.allclose(gradient.norm(dim=-1), torch.ones(2, dtype=torch.float64), atol=1e-4)


def test_active_levels_schedule():
    config = TrainConfig()
    assert active_levels_at(0, config, 5000) == 4
    assert active_levels_at(999, config, 5000) == 4
    assert active_levels_at(1000, config, 5000) == 5
    assert active_levels_at(4999, config, 5000) == 8
    assert active_levels_at(0, TrainConfig(start_levels=8), 5000) == 8


def test_cosine_factor():
    assert cosine_factor(0, 100, 0.05) == pytest.approx(1.0)
    assert cosine_factor(50, 100, 0.05) == pytest.approx(0.525)
    assert cosine_factor(100, 100, 0.05) == pytest.approx(0.05)


def test_check_finite():
    check_finite(0, {"rgb": torch.tensor(0.5)})
    with pytest.raises(TrainingDiverged, match="'eikonal'") as info:
        check_finite(7, {"rgb": torch.tensor(0.5), "eikonal": torch.tensor(math.nan)})
    assert info.value.iteration == 7


def test_ray_dataset_needs_two_frames(sphere_dataset):
    with pytest.raises(InsufficientData):
        RayDataset.from_frames(
            sphere_dataset.frames[:1], None, sphere_dataset.gt_poses[:1], sphere_dataset.intrinsics
        )


def test_tiny_training_run(sphere_dataset):
    config = TrainConfig(iterations=5, **TINY)
    data = RayDataset.from_frames(
        sphere_dataset.frames,
        sphere_dataset.gt_masks,
        sphere_dataset.gt_poses,
        sphere_dataset.intrinsics,
    )
    result = train(build_field(config), data, config, seed=0)
    assert [record["iteration"] for record in result.history] == list(range(5))
    assert all(np.isfinite(record["total"]) for record in result.history)
    assert result.field.active_levels == config.levels
    assert not result.field.training


def test_checkpoint_round_trip(tmp_path):
    field = build_field(TrainConfig(**TINY), seed=4)
    with torch.no_grad():
        field.encoding.tables.normal_(0.0, 0.1)
        field.geometry[-1].weight.normal_(0.0, 0.1)
    path = save_checkpoint(field, tmp_path / "field.bin", normalization={"scale": 2.0})
    assert read_header(path)["normalization"] == {"scale": 2.0}
    loaded = load_checkpoint(path)
    points = torch.rand(50, 3, generator=torch.Generator().manual_seed(5)) * 2 - 1
    with torch.no_grad():
        assert torch.allclose(loaded.sdf(points), field.sdf(points))
    assert loaded.config() == field.config()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "field.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError, match="not an orbit-recon field checkpoint"):
        load_checkpoint(path)


def test_loss_history_csv(tmp_path):
    history = [
        {"iteration": 0, "rgb": 0.5, "eikonal": 0.25, "mask": 0.125, "total": 0.5375},
        {"iteration": 1, "rgb": 0.4, "eikonal": 0.2, "mask": 0.1, "total": 0.43},
    ]
    path = write_loss_history(history, tmp_path / "loss_history.csv")
    assert path.read_text("utf8").splitlines()[0] == "iteration,rgb,eikonal,mask,total"
    assert read_loss_history(path) == history


def test_finite_difference_gradient_matches_autograd():
    field = build_field(TrainConfig(**TINY), seed=6)
    with torch.no_grad():
        field.encoding.tables.normal_(0.0, 0.1, generator=torch.Generator().manual_seed(7))
        field.geometry[-1].weight.normal_(0.0, 0.1, generator=torch.Generator().manual_seed(8))
    field.double()
    points = torch.rand(64, 3, generator=torch.Generator().manual_seed(9), dtype=torch.float64) * 1.6 - 0.8
    points.requires_grad_(True)
    (autograd,) = torch.autograd.grad(field.sdf(points).sum(), points)
    _, central, _ = field.sdf_and_gradient(points.detach(), eps=1e-5)
    torch.testing.assert_close(central, autograd, atol=1e-4, rtol=1e-4)


def test_opacity_grows_with_sharpness():
    origins = torch.tensor([[0.0, 0.0, -2.0]])
    directions = torch.tensor([[0.0, 0.0, 1.0]])
    opacities = [
        float(render_rays(AnalyticField.sphere(0.5, sharpness=s), origins, directions, 256)["opacity"][0])
        for s in (2.0, 5.0, 20.0, 50.0, 200.0)
    ]
    assert all(a < b for a, b in zip(opacities, opacities[1:])), opacities
    assert 0.0 < opacities[0] and opacities[-1] <= 1.0


def test_eikonal_only_training(sphere_dataset):
    config = TrainConfig(iterations=150, weight_rgb=0.0, weight_mask=0.0, weight_eikonal=1.0, **TINY)
    field = build_field(config, seed=2)
    with torch.no_grad():
        field.encoding.tables.normal_(0.0, 0.5, generator=torch.Generator().manual_seed(3))
        field.geometry[-1].weight.normal_(0.0, 0.5, generator=torch.Generator().manual_seed(4))
    data = RayDataset.from_frames(
        sphere_dataset.frames, None, sphere_dataset.gt_poses, sphere_dataset.intrinsics
    )
    history = train(field, data, config, seed=0).history
    first = np.mean([r["eikonal"] for r in history[:20]])
    last = np.mean([r["eikonal"] for r in history[-20:]])
    assert last < 0.8 * first


@pytest.mark.slow
def test_sphere_reconstruction(small_camera):
    from orbit_recon.evaluation import silhouette_iou
    from orbit_recon.meshing import chamfer_distance, marching_cubes, sample_grid
    from orbit_recon.scene.flyaround import TrajectorySpec, generate_flyaround
    from orbit_recon.scene.primitives import get_preset

    scene = get_preset("sphere")
    dataset = generate_flyaround(scene, TrajectorySpec(40, radius=2.5), small_camera)
    config = TrainConfig()
    data = RayDataset.from_frames(dataset.frames, dataset.gt_masks, dataset.gt_poses, small_camera)
    field = train(build_field(config), data, config, seed=0).field

    mesh = marching_cubes(sample_grid(field, 128))
    mean, _ = chamfer_distance(mesh, scene, n_samples=5000)
    assert mean <= 0.02 * 0.5

    points = torch.rand(4096, 3, generator=torch.Generator().manual_seed(1)) * 1.6 - 0.8
    with torch.no_grad():
        _, gradient, _ = field.sdf_and_gradient(points)
    assert float((gradient.norm(dim=-1) - 1.0).abs().mean()) <= 0.1

    directions = data.directions[:, ::5].reshape(-1, 3)[:10000]
    origins = data.origins.repeat_interleave(data.directions[:, ::5].shape[1], dim=0)[:10000]
    with torch.no_grad():
        weights = render_rays(field, origins, directions, config.samples_per_ray)["weights"]
    assert bool((weights >= 0).all()) and bool((weights.sum(-1) <= 1.0 + 1e-5).all())

    ious = [
        silhouette_iou(mesh, pose, small_camera, mask)
        for pose, mask in zip(dataset.gt_poses[::8], dataset.gt_masks[::8])
    ]
    assert min(ious) >= 0.95, ious
