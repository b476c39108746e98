"""Central handling of pipeline warnings."""

from __future__ import annotations

import logging
from enum import Enum
from typing import Sequence

WARNING_TYPE = "orbit"


class ReconWarnings(Enum):
    """Warning codes emitted by the pipeline stages."""

    EMPTY_MASK = "empty_mask"
    """Segmentation found no foreground component; the frame is skipped downstream."""
    FRAME_UNREGISTERED = "unregistered"
    """A frame could not be registered by structure from motion."""
    SFM_CORRESPONDENCES = "correspondences"
    """Too few correspondences for an estimate."""
    BA_DIVERGENCE = "ba_divergence"
    """Bundle adjustment cost increased over consecutive accepted steps."""
    DEGENERATE_ALIGNMENT = "degenerate_alignment"
    """Similarity alignment is not fully constrained (collinear camera centres)."""
    ENCODING_CLAMPED = "encoding_clamped"
    """Hash-grid inputs outside the [-1, 1] domain were clamped."""
    PHOTOMETRIC_SATURATION = "saturation"
    """A large share of observed pixels is clipped at 0 or 1."""
    CACHE_INVALIDATED = "cache"
    """Cached stage outputs no longer match the manifest and are recomputed."""


def is_suppressed_warning(subtype: str, suppress_warnings: Sequence[str]) -> bool:
    """Check whether ``orbit.<subtype>`` is listed (or ``orbit`` / ``orbit.*``)."""
    for warning_type in suppress_warnings:
        target, _, subtarget = warning_type.partition(".")
        if target == WARNING_TYPE and subtarget in ("", subtype, "*"):
            return True
    return False


def create_warning(
    logger: logging.Logger,
    message: str,
    subtype: ReconWarnings,
    *,
    suppress_warnings: Sequence[str] = (),
) -> str | None:
    """Log a warning tagged ``[orbit.<code>]``.

    :returns: the logged message, or ``None`` when the code is suppressed.
    """
    if is_suppressed_warning(subtype.value, suppress_warnings):
        return None
    message = f"{message} [{WARNING_TYPE}.{subtype.value}]"
    logger.warning(message)
    return message
