"""Foreground masks for spacecraft imagery.

A classical estimator with a single contract: one binary mask per frame that
holds a single connected foreground component (or nothing).

- The luminance threshold is Otsu's, computed on ``log(1/255 + Y)`` so that dim,
  shadowed parts of the target separate from a pure black sky; it is capped at
  ``dark_level`` so those parts are never cut.
- In video mode the component overlapping most with the previous mask wins,
  and frames with a bright background are refined with GrabCut seeded from
  the propagated mask.
- A 3x3 closing removes pinholes; the largest component is then re-selected.
"""

from __future__ import annotations

import dataclasses as dc
import logging
from collections.abc import Sequence
from typing import Literal

import cv2
import numpy as np

from .warnings_ import ReconWarnings, create_warning

LOGGER = logging.getLogger(__name__)

SegmentationMode = Literal["image", "video", "off"]

MIN_COMPONENT_PX = 25


@dc.dataclass(frozen=True)
class SegmentationParams:
    dark_level: float = 0.01
    """luminance below which a pixel always counts as sky"""
    min_component_px: int = MIN_COMPONENT_PX
    grabcut_iterations: int = 3
    propagation_margin: float = 0.15
    """dilation of the previous mask, as a fraction of its equivalent diameter"""
    clutter_fraction: float = 0.05
    """share of bright pixels outside the propagated mask that triggers refinement"""


def luminance(frame: np.ndarray) -> np.ndarray:
    """Rec. 709 luminance in ``[0, 1]`` of an RGB frame (uint8 or float)."""
    frame = np.asarray(frame)
    if frame.dtype == np.uint8:
        frame = frame.astype(np.float64) / 255.0
    return frame[..., :3] @ np.array([0.2126, 0.7152, 0.0722])


def _otsu_threshold(values: np.ndarray) -> float | None:
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-9:
        return None
    scaled = np.round((values - lo) / (hi - lo) * 255).astype(np.uint8)
    level, _ = cv2.threshold(scaled, 0, 255, cv2.THRESH_BINARY | cv2.THRESH_OTSU)
    return lo + (level + 0.5) / 255 * (hi - lo)


def _components(binary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    count, labels, stats, _ = cv2.connectedComponentsWithStats(
        binary.astype(np.uint8), connectivity=8
    )
    return labels, stats[:, cv2.CC_STAT_AREA]


def _select_component(
    binary: np.ndarray, prev_mask: np.ndarray | None, min_px: int
) -> np.ndarray:
    labels, areas = _components(binary)
    candidates = [label for label in range(1, len(areas)) if areas[label] > min_px]
    if not candidates:
        return np.zeros(binary.shape, bool)
    chosen = max(candidates, key=lambda label: areas[label])
    if prev_mask is not None and prev_mask.any():
        overlaps = np.bincount(labels[prev_mask], minlength=len(areas))
        best = max(candidates, key=lambda label: (overlaps[label], areas[label]))
        if overlaps[best] > 0:
            chosen = best
    return labels == chosen


def _close(mask: np.ndarray) -> np.ndarray:
    kernel = np.ones((3, 3), np.uint8)
    return cv2.morphologyEx(mask.astype(np.uint8), cv2.MORPH_CLOSE, kernel) > 0


def _grabcut(
    frame: np.ndarray, prev_mask: np.ndarray, params: SegmentationParams
) -> np.ndarray:
    area = int(prev_mask.sum())
    diameter = 2.0 * np.sqrt(area / np.pi)
    radius = max(2, int(round(params.propagation_margin * diameter)))
    kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * radius + 1, 2 * radius + 1))
    grown = cv2.dilate(prev_mask.astype(np.uint8), kernel) > 0
    core = cv2.erode(prev_mask.astype(np.uint8), kernel) > 0

    labels = np.full(prev_mask.shape, cv2.GC_BGD, np.uint8)
    labels[grown] = cv2.GC_PR_BGD
    labels[prev_mask] = cv2.GC_PR_FGD
    labels[core] = cv2.GC_FGD
    image = frame if frame.dtype == np.uint8 else np.round(frame * 255).astype(np.uint8)
    bgd_model = np.zeros((1, 65), np.float64)
    fgd_model = np.zeros((1, 65), np.float64)
    cv2.setRNGSeed(0)
    cv2.grabCut(
        cv2.cvtColor(np.ascontiguousarray(image[..., :3]), cv2.COLOR_RGB2BGR),
        labels,
        None,
        bgd_model,
        fgd_model,
        params.grabcut_iterations,
        cv2.GC_INIT_WITH_MASK,
    )
    return (labels == cv2.GC_FGD) | (labels == cv2.GC_PR_FGD)


def segment_frame(
    frame: np.ndarray,
    prev_mask: np.ndarray | None = None,
    params: SegmentationParams | None = None,
) -> np.ndarray:
    """Estimate the foreground mask of ``frame``.

    :param prev_mask: mask of the previous frame (video mode), or ``None``
    :returns: boolean mask with one connected component, or all ``False``
    """
    params = params or SegmentationParams()
    if frame.size == 0:
        raise ValueError("cannot segment an empty frame")
    if prev_mask is not None and prev_mask.shape != frame.shape[:2]:
        raise ValueError(
            f"previous mask shape {prev_mask.shape} does not match frame {frame.shape[:2]}"
        )
    lum = luminance(frame)
    log_lum = np.log(1.0 / 255.0 + lum)
    threshold = _otsu_threshold(log_lum)
    if threshold is None:
        return np.zeros(lum.shape, bool)
    threshold = min(threshold, float(np.log(1.0 / 255.0 + params.dark_level)))
    binary = log_lum > threshold

    if prev_mask is not None and prev_mask.sum() > params.min_component_px:
        outside = ~cv2.dilate(prev_mask.astype(np.uint8), np.ones((9, 9), np.uint8)).astype(bool)
        if outside.any() and binary[outside].mean() > params.clutter_fraction:
            binary = _grabcut(frame, prev_mask, params)

    mask = _select_component(binary, prev_mask, params.min_component_px)
    if not mask.any():
        return mask
    return _select_component(_close(mask), prev_mask, params.min_component_px)


def segment_sequence(
    frames: Sequence[np.ndarray] | np.ndarray,
    mode: SegmentationMode = "video",
    params: SegmentationParams | None = None,
    *,
    suppress_warnings: Sequence[str] = (),
) -> np.ndarray:
    """Masks for a whole sequence; ``off`` returns all-foreground masks."""
    frames = np.asarray(frames)
    if mode == "off":
        return np.ones(frames.shape[:3], bool)
    if mode not in ("image", "video"):
        raise ValueError(f"unknown segmentation mode {mode!r}")
    masks = np.zeros(frames.shape[:3], bool)
    prev: np.ndarray | None = None
    for index, frame in enumerate(frames):
        masks[index] = segment_frame(frame, prev if mode == "video" else None, params)
        if not masks[index].any():
            create_warning(
                LOGGER,
                f"frame {index}: no foreground component found",
                ReconWarnings.EMPTY_MASK,
                suppress_warnings=suppress_warnings,
            )
        elif mode == "video":
            prev = masks[index]
    return masks


def apply_mask(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Copy of ``frame`` with every pixel outside ``mask`` set to exactly zero."""
    if frame.shape[:2] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match frame {frame.shape[:2]}")
    out = np.array(frame, copy=True)
    out[~mask.astype(bool)] = 0
    return out


def mask_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def compare_modes(
    frames: np.ndarray, gt_masks: np.ndarray, params: SegmentationParams | None = None
) -> dict[str, float]:
    """Mean IoU against ground truth of image mode and video mode."""
    result = {}
    for mode in ("image", "video"):
        masks = segment_sequence(frames, mode, params, suppress_warnings=["orbit.*"])
        result[mode] = float(np.mean([mask_iou(m, g) for m, g in zip(masks, gt_masks)]))
    return result
