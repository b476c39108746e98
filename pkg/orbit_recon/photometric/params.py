"""Photometric parameters and the forward image-formation chain.

The chain turns linear radiance into an observed pixel value::

    exposure (x 2**ev) -> vignetting (x (1 + k1 r^2 + k2 r^4), >= 0)
      -> colour correction (3x3 matrix) -> response curve (per channel) -> clamp [0, 1]

``r`` is the distance to the principal point divided by the half diagonal of
the image. The response curve is piecewise linear with knots at ``k / 8`` and
values ``cumsum(increments) / sum(increments)``.
"""

from __future__ import annotations

import dataclasses as dc
import math

import numpy as np

from ..geometry import CameraIntrinsics

CRF_SEGMENTS = 8
CRF_KNOTS = np.arange(CRF_SEGMENTS + 1) / CRF_SEGMENTS


@dc.dataclass(frozen=True, eq=False)
class FrameParams:
    """Capture-dependent parameters of a single frame."""

    exposure_ev: float = 0.0
    ccm: np.ndarray = dc.field(default_factory=lambda: np.eye(3))


@dc.dataclass(frozen=True, eq=False)
class ResponseParams:
    """Camera-intrinsic parameters shared by all frames.

    ``vignette`` is ``(3, 2)`` (k1, k2 per channel), ``crf`` is ``(3, 8)``
    non-negative segment increments per channel.
    """

    vignette: np.ndarray = dc.field(default_factory=lambda: np.zeros((3, 2)))
    crf: np.ndarray = dc.field(
        default_factory=lambda: np.full((3, CRF_SEGMENTS), 1.0 / CRF_SEGMENTS)
    )

    def __post_init__(self):
        vignette = np.asarray(self.vignette, dtype=float).reshape(3, 2)
        crf = np.asarray(self.crf, dtype=float).reshape(3, CRF_SEGMENTS)
        if np.any(crf < 0) or np.any(crf.sum(axis=1) <= 0):
            raise ValueError("response increments must be non-negative with a positive sum")
        object.__setattr__(self, "vignette", vignette)
        object.__setattr__(self, "crf", crf)

    def curve_values(self) -> np.ndarray:
        """``(3, 9)`` values of each response curve at the knots."""
        return crf_knot_values(self.crf)


def crf_knot_values(increments: np.ndarray) -> np.ndarray:
    increments = np.asarray(increments, dtype=float)
    cumulative = np.cumsum(increments, axis=-1) / increments.sum(axis=-1, keepdims=True)
    zeros = np.zeros(cumulative.shape[:-1] + (1,))
    return np.concatenate([zeros, cumulative], axis=-1)


def gamma_increments(gamma: float) -> np.ndarray:
    """Increments of the 8-segment curve interpolating ``v ** (1 / gamma)``."""
    return np.diff(CRF_KNOTS ** (1.0 / gamma))


def apply_crf(values: np.ndarray, increments: np.ndarray) -> np.ndarray:
    """Apply one channel's response curve to values in ``[0, 1]``."""
    ys = crf_knot_values(increments)
    x = np.clip(values, 0.0, 1.0)
    segment = np.minimum(np.floor(x * CRF_SEGMENTS), CRF_SEGMENTS - 1).astype(int)
    slope = (ys[segment + 1] - ys[segment]) * CRF_SEGMENTS
    return ys[segment] + (x - CRF_KNOTS[segment]) * slope


def invert_crf(increments: np.ndarray, value, iterations: int = 64):
    """Invert a monotone response curve by bisection.

    Endpoints map to exactly 0 and 1.
    """
    value = np.asarray(value, dtype=float)
    lo = np.zeros_like(value)
    hi = np.ones_like(value)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        below = apply_crf(mid, increments) < value
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    result = 0.5 * (lo + hi)
    result = np.where(value <= 0.0, 0.0, result)
    result = np.where(value >= 1.0, 1.0, result)
    return result if result.ndim else float(result)


def normalized_radius(pixels: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    offset = np.asarray(pixels, dtype=float) - K.principal_point
    return np.linalg.norm(offset, axis=-1) / K.half_diagonal


def vignette_gain(radius: np.ndarray, vignette: np.ndarray) -> np.ndarray:
    """Per-channel gain ``(..., 3)`` at normalized radii ``radius``."""
    r2 = np.asarray(radius, dtype=float)[..., None] ** 2
    return np.maximum(1.0 + vignette[:, 0] * r2 + vignette[:, 1] * r2 * r2, 0.0)


def forward_pipeline(
    radiance: np.ndarray,
    pixels: np.ndarray,
    frame: FrameParams,
    response: ResponseParams,
    K: CameraIntrinsics,
) -> np.ndarray:
    """Map linear radiance ``(..., 3)`` observed at ``pixels`` ``(..., 2)`` to pixel values."""
    out = np.asarray(radiance, dtype=float) * 2.0 ** frame.exposure_ev
    out = out * vignette_gain(normalized_radius(pixels, K), response.vignette)
    out = out @ np.asarray(frame.ccm, dtype=float).T
    out = np.stack(
        [apply_crf(out[..., c], response.crf[c]) for c in range(3)], axis=-1
    )
    return np.clip(out, 0.0, 1.0)


@dc.dataclass(eq=False)
class PhotometricParams:
    """Per-frame exposure and colour correction plus the shared response."""

    exposure_ev: np.ndarray
    ccm: np.ndarray
    response: ResponseParams = dc.field(default_factory=ResponseParams)
    radiance_gain_ev: float = 0.0
    """Global gain absorbing the brightness gauge of a frozen field."""

    def __post_init__(self):
        self.exposure_ev = np.asarray(self.exposure_ev, dtype=float).reshape(-1)
        self.ccm = np.asarray(self.ccm, dtype=float).reshape(-1, 3, 3)
        if len(self.ccm) != len(self.exposure_ev):
            raise ValueError(
                f"{len(self.exposure_ev)} exposure values but {len(self.ccm)} colour matrices"
            )

    @classmethod
    def identity(cls, n_frames: int) -> PhotometricParams:
        return cls(np.zeros(n_frames), np.tile(np.eye(3), (n_frames, 1, 1)))

    def __len__(self) -> int:
        return len(self.exposure_ev)

    def frame(self, index: int) -> FrameParams:
        return FrameParams(
            float(self.exposure_ev[index]) + self.radiance_gain_ev, self.ccm[index]
        )

    def is_identity(self) -> bool:
        return bool(
            np.all(self.exposure_ev == 0)
            and self.radiance_gain_ev == 0
            and np.all(self.ccm == np.eye(3))
            and np.all(self.response.vignette == 0)
            and np.allclose(self.response.curve_values(), CRF_KNOTS, rtol=0, atol=0)
        )

    def as_dict(self) -> dict:
        return {
            "exposure_ev": self.exposure_ev.tolist(),
            "ccm": self.ccm.tolist(),
            "vignette": self.response.vignette.tolist(),
            "crf_increments": self.response.crf.tolist(),
            "radiance_gain_ev": self.radiance_gain_ev,
        }

    @classmethod
    def from_dict(cls, data: dict) -> PhotometricParams:
        return cls(
            np.array(data["exposure_ev"], dtype=float),
            np.array(data["ccm"], dtype=float),
            ResponseParams(
                np.array(data["vignette"], dtype=float),
                np.array(data["crf_increments"], dtype=float),
            ),
            float(data.get("radiance_gain_ev", 0.0)),
        )

    def subset(self, indices) -> PhotometricParams:
        indices = list(indices)
        return PhotometricParams(
            self.exposure_ev[indices],
            self.ccm[indices],
            self.response,
            self.radiance_gain_ev,
        )


def exposure_schedule(kind: str, n_frames: int, amplitude: float, period: float = 0.0):
    """Per-frame exposure offsets (EV) used to corrupt synthetic datasets.

    ``kind`` is ``none``, ``sinusoid`` (one full period over the sequence unless
    ``period`` frames is given) or ``ramp`` (from ``-amplitude`` to ``+amplitude``).
    """
    index = np.arange(n_frames, dtype=float)
    if kind == "none" or amplitude == 0:
        return np.zeros(n_frames)
    if kind == "sinusoid":
        period = period or n_frames
        return amplitude * np.sin(2 * math.pi * index / period)
    if kind == "ramp":
        return amplitude * (2 * index / max(n_frames - 1, 1) - 1)
    raise ValueError(f"unknown exposure schedule {kind!r}")
