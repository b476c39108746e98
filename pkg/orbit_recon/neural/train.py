"""Fitting a signed distance field to posed, masked frames."""

from __future__ import annotations

import dataclasses as dc
import logging
import math
from collections.abc import Sequence
from functools import partial
from typing import TypedDict

import numpy as np
import torch
from torch import nn
from tqdm.auto import tqdm

from ..config.main import TrainConfig
from ..errors import InsufficientData, TrainingDiverged
from ..geometry import CameraIntrinsics, Pose, pixel_rays
from ..warnings_ import ReconWarnings, create_warning
from .field import SdfField
from .render import render_rays

LOGGER = logging.getLogger(__name__)


class LossRecord(TypedDict):
    """A row of ``loss_history.csv``."""

    iteration: int
    rgb: float
    eikonal: float
    mask: float
    total: float


@dc.dataclass(eq=False)
class RayDataset:
    """Every pixel ray of a set of frames, in field coordinates."""

    images: torch.Tensor
    """``(F, H * W, 3)`` observed values in ``[0, 1]``"""
    masks: torch.Tensor
    """``(F, H * W)`` foreground flags as floats"""
    origins: torch.Tensor
    """``(F, 3)`` camera centres"""
    directions: torch.Tensor
    """``(F, H * W, 3)`` unit ray directions"""
    pixels: torch.Tensor
    """``(H * W, 2)`` pixel centres"""
    frame_indices: list[int]
    """position of each frame in the full sequence (selects photometric parameters)"""

    @classmethod
    def from_frames(
        cls,
        frames: np.ndarray,
        masks: np.ndarray | None,
        poses: Sequence[Pose],
        K: CameraIntrinsics,
        frame_indices: Sequence[int] | None = None,
    ) -> RayDataset:
        frames = np.asarray(frames)
        if len(frames) < 2:
            raise InsufficientData(f"training needs >= 2 posed frames (got {len(frames)})")
        if len(poses) != len(frames):
            raise ValueError(f"{len(poses)} poses for {len(frames)} frames")
        images = frames.astype(np.float32) / (255.0 if frames.dtype == np.uint8 else 1.0)
        if masks is None:
            masks = np.ones(frames.shape[:3], bool)
        origins, directions = [], []
        for pose in poses:
            o, d = pixel_rays(pose, K)
            origins.append(o[0, 0])
            directions.append(d.reshape(-1, 3))
        return cls(
            torch.as_tensor(images.reshape(len(frames), -1, 3)),
            torch.as_tensor(np.asarray(masks, dtype=np.float32).reshape(len(frames), -1)),
            torch.as_tensor(np.array(origins), dtype=torch.float32),
            torch.as_tensor(np.array(directions), dtype=torch.float32),
            torch.as_tensor(K.pixel_centres().reshape(-1, 2), dtype=torch.float32),
            list(frame_indices) if frame_indices is not None else list(range(len(frames))),
        )

    def __len__(self) -> int:
        return self.images.shape[0]

    def sample(self, n_rays: int, generator: torch.Generator) -> dict[str, torch.Tensor]:
        frame = torch.randint(len(self), (n_rays,), generator=generator)
        pixel = torch.randint(self.images.shape[1], (n_rays,), generator=generator)
        return {
            "origins": self.origins[frame],
            "directions": self.directions[frame, pixel],
            "rgb": self.images[frame, pixel],
            "mask": self.masks[frame, pixel],
            "pixels": self.pixels[pixel],
            "frames": torch.as_tensor(self.frame_indices)[frame],
        }


@dc.dataclass(eq=False)
class TrainResult:
    field: SdfField
    history: list[LossRecord]


def active_levels_at(iteration: int, config: TrainConfig, iterations: int) -> int:
    """Coarse-to-fine schedule: ``start_levels`` plus one level every ``grow_every`` steps."""
    levels = config.levels
    start = min(config.start_levels, levels)
    if start >= levels:
        return levels
    # the finest level gets the last segment of the run
    grow_every = config.grow_every or max(1, iterations // (levels - start + 1))
    return min(levels, start + iteration // grow_every)


def cosine_factor(iteration: int, iterations: int, floor: float) -> float:
    progress = min(iteration / max(iterations, 1), 1.0)
    return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def build_field(config: TrainConfig, seed: int = 0) -> SdfField:
    return SdfField(
        config.levels,
        config.min_resolution,
        config.max_resolution,
        config.log2_table_size,
        config.features_per_level,
        config.hidden_width,
        config.init_sharpness,
        seed=seed,
    )


def losses(bundle, batch, config: TrainConfig) -> dict[str, torch.Tensor]:
    rgb = (bundle["rgb"] - batch["rgb"]).abs().mean()
    inside = bundle["inside"]
    if bool(inside.any()):
        norms = bundle["gradients"][inside].norm(dim=-1)
        eikonal = ((norms - 1.0) ** 2).mean()
    else:
        eikonal = rgb.new_zeros(())
    opacity = bundle["opacity"].clamp(1e-4, 1.0 - 1e-4)
    mask = nn.functional.binary_cross_entropy(opacity, batch["mask"])
    total = config.weight_rgb * rgb + config.weight_eikonal * eikonal + config.weight_mask * mask
    return {"rgb": rgb, "eikonal": eikonal, "mask": mask, "total": total}


def check_finite(iteration: int, terms: dict[str, torch.Tensor]) -> None:
    for name, value in terms.items():
        if not torch.isfinite(value):
            raise TrainingDiverged(iteration, name, float(value))


def train(
    field: SdfField,
    data: RayDataset,
    config: TrainConfig | None = None,
    *,
    seed: int = 0,
    photometric: nn.Module | None = None,
    photometric_lr: float = 5e-3,
    iterations: int | None = None,
    show_progress: bool = False,
    suppress_warnings: Sequence[str] = (),
) -> TrainResult:
    """Optimise ``field`` (and ``photometric`` when given) on ``data``.

    :raises TrainingDiverged: a loss term became NaN or infinite
    """
    config = config or TrainConfig()
    iterations = config.iterations if iterations is None else iterations
    threads = torch.get_num_threads()
    if config.deterministic:
        torch.set_num_threads(1)
    generator = torch.Generator().manual_seed(seed)
    groups = [
        {"params": field.table_parameters(), "lr": config.lr_tables},
        {"params": field.head_parameters(), "lr": config.lr_heads},
    ]
    if photometric is not None:
        groups.append({"params": list(photometric.parameters()), "lr": photometric_lr})
    optimizer = torch.optim.Adam(groups, betas=(0.9, 0.99), eps=1e-15)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda it: cosine_factor(it, iterations, config.lr_final_factor)
    )
    history: list[LossRecord] = []
    field.train()
    field.clamped_queries = 0
    try:
        for iteration in tqdm(range(iterations), desc="train", disable=not show_progress):
            field.active_levels = active_levels_at(iteration, config, iterations)
            batch = data.sample(config.rays_per_batch, generator)
            post = None
            if photometric is not None:
                post = partial(photometric, pixels=batch["pixels"], frames=batch["frames"])
            bundle = render_rays(
                field,
                batch["origins"],
                batch["directions"],
                config.samples_per_ray,
                generator=generator,
                photometric=post,
            )
            terms = losses(bundle, batch, config)
            check_finite(iteration, terms)
            optimizer.zero_grad(set_to_none=True)
            terms["total"].backward()
            optimizer.step()
            scheduler.step()
            history.append(
                {
                    "iteration": iteration,
                    **{name: float(value) for name, value in terms.items()},  # type: ignore[typeddict-item]
                }
            )
    finally:
        torch.set_num_threads(threads)
        field.eval()
    field.active_levels = config.levels
    samples = max(1, iterations * config.rays_per_batch * config.samples_per_ray * 7)
    if field.clamped_queries > 0.01 * samples:
        create_warning(
            LOGGER,
            f"{field.clamped_queries} field queries fell outside [-1, 1]^3 and were clamped",
            ReconWarnings.ENCODING_CLAMPED,
            suppress_warnings=suppress_warnings,
        )
    if history:
        LOGGER.info(
            "trained %d iterations: rgb %.4f, eikonal %.4f, mask %.4f",
            iterations,
            history[-1]["rgb"],
            history[-1]["eikonal"],
            history[-1]["mask"],
        )
    return TrainResult(field, history)


def smoothed(values: Sequence[float], window: int = 50) -> np.ndarray:
    """Moving average used to compare losses across a run."""
    values = np.asarray(values, dtype=float)
    window = max(1, min(window, len(values)))
    return np.convolve(values, np.ones(window) / window, mode="valid")
