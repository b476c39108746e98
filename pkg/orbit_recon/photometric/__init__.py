"""Per-frame photometric compensation (exposure, vignetting, colour, response)."""

from .fit import FitResult, PhotometricModel, fit, render_radiance
from .params import (
    FrameParams,
    PhotometricParams,
    ResponseParams,
    exposure_schedule,
    forward_pipeline,
    gamma_increments,
    invert_crf,
)
from .report import evaluation_report, linearity_score, read_params, write_params, write_report

__all__ = (
    "FitResult",
    "FrameParams",
    "PhotometricModel",
    "PhotometricParams",
    "ResponseParams",
    "evaluation_report",
    "exposure_schedule",
    "fit",
    "forward_pipeline",
    "gamma_increments",
    "invert_crf",
    "linearity_score",
    "read_params",
    "render_radiance",
    "write_params",
    "write_report",
)
