"""Fitting per-frame photometric parameters to a rendered field.

Two phases. In the first the field either trains jointly with the
photometric parameters (``cotrain``) or stays frozen; in the second it is
always frozen and only the photometric parameters move. With a frozen field
every frame is rendered once and the fit only touches pixel values.

Frame 0 anchors the gauge: its exposure is 0 and its colour matrix is the
identity. Colour matrices keep grey grey (every row sums to 1), so overall
brightness can only move through the exposure. A global gain absorbs the
brightness of a field that was trained without compensation.
"""

from __future__ import annotations

import dataclasses as dc
import logging
from collections.abc import Sequence
from typing import TypedDict

import numpy as np
import torch
from torch import nn
from tqdm.auto import tqdm

from ..config.main import PhaseSchedule, PhotometricConfig, TrainConfig
from ..errors import TrainingDiverged
from ..geometry import CameraIntrinsics
from ..warnings_ import ReconWarnings, create_warning
from .params import CRF_SEGMENTS, PhotometricParams, ResponseParams

LOGGER = logging.getLogger(__name__)

SATURATION_SHARE = 0.05
_IDENTITY_RAW = float(np.log(np.expm1(1.0)))  # softplus(raw) == 1


class FitRecord(TypedDict):
    phase: int
    iteration: int
    loss: float


class PhotometricModel(nn.Module):
    """Differentiable version of :func:`~orbit_recon.photometric.params.forward_pipeline`."""

    def __init__(self, n_frames: int, K: CameraIntrinsics, fit_gain: bool = True):
        super().__init__()
        self.n_frames = n_frames
        self.exposure_ev = nn.Parameter(torch.zeros(n_frames))
        self.ccm = nn.Parameter(torch.eye(3).repeat(n_frames, 1, 1))
        self.vignette = nn.Parameter(torch.zeros(3, 2))
        self.crf_raw = nn.Parameter(torch.full((3, CRF_SEGMENTS), _IDENTITY_RAW))
        self.gain_ev = nn.Parameter(torch.zeros(()), requires_grad=fit_gain)
        self.register_buffer("principal_point", torch.tensor([K.cx, K.cy], dtype=torch.float32))
        self.half_diagonal = K.half_diagonal

    def colour_matrices(self) -> torch.Tensor:
        """Per-frame ``(N, 3, 3)`` colour matrices projected onto rows summing to 1."""
        return self.ccm + (1.0 - self.ccm.sum(-1, keepdim=True)) / 3.0

    def ccm_penalty(self) -> torch.Tensor:
        """Mean squared distance of the free colour matrices from the identity."""
        if self.n_frames < 2:
            return self.ccm.new_zeros(())
        return (self.colour_matrices()[1:] - torch.eye(3)).pow(2).mean()

    def crf_knots(self) -> torch.Tensor:
        increments = nn.functional.softplus(self.crf_raw)
        cumulative = increments.cumsum(-1) / increments.sum(-1, keepdim=True)
        return torch.cat([cumulative.new_zeros(3, 1), cumulative], dim=-1)

    def forward(
        self, radiance: torch.Tensor, pixels: torch.Tensor, frames: torch.Tensor
    ) -> torch.Tensor:
        anchor = frames == 0
        ev = torch.where(anchor, torch.zeros_like(frames, dtype=radiance.dtype), self.exposure_ev[frames])
        out = radiance * torch.pow(2.0, ev + self.gain_ev)[:, None]

        r2 = ((pixels - self.principal_point).norm(dim=-1) / self.half_diagonal)[:, None] ** 2
        gain = 1.0 + self.vignette[:, 0] * r2 + self.vignette[:, 1] * r2 * r2
        out = out * gain.clamp(min=0.0)

        ccm = torch.where(anchor[:, None, None], torch.eye(3, dtype=radiance.dtype), self.colour_matrices()[frames])
        out = torch.einsum("rij,rj->ri", ccm, out)

        knots = self.crf_knots()
        x = out.clamp(0.0, 1.0)
        segment = torch.clamp(torch.floor(x * CRF_SEGMENTS).long(), max=CRF_SEGMENTS - 1)
        channels = torch.arange(3).expand_as(segment)
        lower = knots[channels, segment]
        upper = knots[channels, segment + 1]
        out = lower + (x * CRF_SEGMENTS - segment) * (upper - lower)
        return out.clamp(0.0, 1.0)

    @torch.no_grad()
    def to_params(self) -> PhotometricParams:
        exposure = self.exposure_ev.detach().double().numpy().copy()
        ccm = self.colour_matrices().detach().double().numpy().copy()
        exposure[0] = 0.0
        ccm[0] = np.eye(3)
        increments = nn.functional.softplus(self.crf_raw).double().numpy()
        return PhotometricParams(
            exposure,
            ccm,
            ResponseParams(self.vignette.detach().double().numpy(), increments),
            float(self.gain_ev),
        )


@dc.dataclass(eq=False)
class FitResult:
    params: PhotometricParams
    history: list[FitRecord]
    model: PhotometricModel


@torch.no_grad()
def _render_frames(
    field, data, n_samples: int, chunk: int = 1024
) -> tuple[torch.Tensor, torch.Tensor]:
    from ..neural.render import render_rays

    rgb, opacity = [], []
    for index in range(len(data)):
        directions = data.directions[index]
        origins = data.origins[index].expand_as(directions)
        parts = [
            render_rays(field, origins[s : s + chunk], directions[s : s + chunk], n_samples)
            for s in range(0, directions.shape[0], chunk)
        ]
        rgb.append(torch.cat([part["rgb"] for part in parts]))
        opacity.append(torch.cat([part["opacity"] for part in parts]))
    return torch.stack(rgb), torch.stack(opacity)


def render_radiance(field, data, n_samples: int, chunk: int = 1024) -> torch.Tensor:
    """Composited radiance ``(F, H * W, 3)`` of every ray in ``data``."""
    return _render_frames(field, data, n_samples, chunk)[0]


def _warn_saturation(
    data, opacity: torch.Tensor, suppress_warnings: Sequence[str]
) -> None:
    # without segmentation the masks are all ones; the rendered opacity keeps sky out
    inside = (data.masks > 0.5) & (opacity > 0.5)
    if not bool(inside.any()):
        return
    saturated = ((data.images >= 1.0) | (data.images <= 0.0)).any(-1) & inside
    share = float(saturated.sum()) / float(inside.sum())
    if share > SATURATION_SHARE:
        create_warning(
            LOGGER,
            f"{share:.1%} of foreground pixels are clipped; exposure estimates may be biased",
            ReconWarnings.PHOTOMETRIC_SATURATION,
            suppress_warnings=suppress_warnings,
        )


def _fit_frozen(
    model: PhotometricModel,
    radiance: torch.Tensor,
    data,
    iterations: int,
    config: PhotometricConfig,
    generator: torch.Generator,
    phase: int,
    show_progress: bool,
) -> list[FitRecord]:
    from ..neural.train import cosine_factor

    optimizer = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad], lr=config.lr, betas=(0.9, 0.99)
    )
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda it: cosine_factor(it, iterations, 0.1)
    )
    frame_indices = torch.as_tensor(data.frame_indices)
    history: list[FitRecord] = []
    for iteration in tqdm(range(iterations), desc=f"photometric {phase}", disable=not show_progress):
        frame = torch.randint(len(data), (config.rays_per_batch,), generator=generator)
        pixel = torch.randint(data.images.shape[1], (config.rays_per_batch,), generator=generator)
        predicted = model(radiance[frame, pixel], data.pixels[pixel], frame_indices[frame])
        loss = (predicted - data.images[frame, pixel]).abs().mean()
        loss = loss + config.ccm_weight * model.ccm_penalty()
        if not torch.isfinite(loss):
            raise TrainingDiverged(iteration, "photometric", float(loss))
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        scheduler.step()
        history.append({"phase": phase, "iteration": iteration, "loss": float(loss)})
    return history


def fit(
    field,
    data,
    schedule: PhaseSchedule | None = None,
    config: PhotometricConfig | None = None,
    *,
    n_frames: int | None = None,
    K: CameraIntrinsics,
    train_config: TrainConfig | None = None,
    seed: int = 0,
    show_progress: bool = False,
    suppress_warnings: Sequence[str] = (),
) -> FitResult:
    """Fit photometric parameters for the frames of ``data`` (a ``RayDataset``).

    ``n_frames`` is the length of the full sequence; ``data.frame_indices``
    select the parameter rows.

    :raises TrainingDiverged: a loss became NaN or infinite
    """
    from ..neural.train import train

    config = config or PhotometricConfig()
    schedule = schedule or config.schedule
    train_config = train_config or TrainConfig()
    n_frames = n_frames or (max(data.frame_indices) + 1)
    generator = torch.Generator().manual_seed(seed)
    threads = torch.get_num_threads()
    if train_config.deterministic:
        torch.set_num_threads(1)
    model = PhotometricModel(n_frames, K, fit_gain=not config.cotrain)
    history: list[FitRecord] = []
    try:
        if config.cotrain:
            result = train(
                field,
                data,
                train_config,
                seed=seed,
                photometric=model,
                photometric_lr=config.lr,
                iterations=schedule.phase1_iters,
                show_progress=show_progress,
                suppress_warnings=suppress_warnings,
            )
            history += [
                {"phase": 1, "iteration": r["iteration"], "loss": r["rgb"]} for r in result.history
            ]
            radiance, opacity = _render_frames(field, data, train_config.samples_per_ray)
            _warn_saturation(data, opacity, suppress_warnings)
        else:
            radiance, opacity = _render_frames(field, data, train_config.samples_per_ray)
            _warn_saturation(data, opacity, suppress_warnings)
            history += _fit_frozen(
                model, radiance, data, schedule.phase1_iters, config, generator, 1, show_progress
            )
        # the field is frozen from here on
        history += _fit_frozen(
            model, radiance, data, schedule.phase2_iters, config, generator, 2, show_progress
        )
    finally:
        torch.set_num_threads(threads)
    params = model.to_params()
    LOGGER.info(
        "photometric fit: exposure %.3f..%.3f EV, gain %.3f EV",
        params.exposure_ev.min(),
        params.exposure_ev.max(),
        params.radiance_gain_ev,
    )
    return FitResult(params, history, model)
