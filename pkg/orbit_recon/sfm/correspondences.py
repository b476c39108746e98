"""Keypoints, pairwise matches and the track graph."""

from __future__ import annotations

import dataclasses as dc
import logging
from collections.abc import Sequence
from typing import Literal

import cv2
import numpy as np
from scipy.cluster.hierarchy import DisjointSet

from ..geometry import backproject_depth, project_points
from ..scene.flyaround import FlyaroundDataset
from ..warnings_ import ReconWarnings, create_warning

LOGGER = logging.getLogger(__name__)

Provenance = Literal["detected", "synthetic"]

PATCH_RADIUS = 5  # 11x11 patches


@dc.dataclass(eq=False)
class Correspondences:
    """Keypoints per frame plus matches between frames of a sliding window.

    ``matches[(i, j)]`` (``i < j``) is an ``(M, 2)`` array of keypoint indices
    into ``keypoints[i]`` and ``keypoints[j]``.
    """

    keypoints: dict[int, np.ndarray]
    matches: dict[tuple[int, int], np.ndarray]
    provenance: Provenance
    window: int

    def __post_init__(self):
        for (i, j) in self.matches:
            if not 0 < j - i <= self.window:
                raise ValueError(f"pair ({i}, {j}) outside the matching window {self.window}")

    @property
    def frames(self) -> list[int]:
        return sorted(self.keypoints)

    def pixel_pairs(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Matched pixel coordinates ``(x_i, x_j)`` of the pair ``(i, j)``."""
        index = self.matches.get((i, j), np.zeros((0, 2), int))
        return self.keypoints[i][index[:, 0]], self.keypoints[j][index[:, 1]]

    def n_matches(self, i: int, j: int) -> int:
        return len(self.matches.get((i, j), ()))


@dc.dataclass(eq=False)
class Track:
    """One physical point observed in several frames (at most once per frame)."""

    observations: dict[int, np.ndarray]
    point_id: int | None = None

    def __len__(self) -> int:
        return len(self.observations)


def window_pairs(frames: Sequence[int], window: int) -> list[tuple[int, int]]:
    """Pairs ``(i, j)`` of ``frames`` with ``0 < j - i <= window``."""
    if window < 1:
        raise ValueError(f"window must be >= 1 (got {window})")
    frames = sorted(frames)
    return [(i, j) for a, i in enumerate(frames) for j in frames[a + 1 :] if j - i <= window]


def synthetic_correspondences(
    dataset: FlyaroundDataset,
    window: int = 30,
    noise_px: float = 0.0,
    *,
    points_per_frame: int = 150,
    seed: int = 0,
    frames: Sequence[int] | None = None,
) -> Correspondences:
    """Ground-truth correspondences: surface samples projected into every view.

    Points are seeded from the ground-truth depth of each frame, then kept in
    a view when they project inside the image and agree with that view's
    depth (visibility). Gaussian noise is drawn once per observation.
    """
    if not dataset.has_ground_truth:
        raise ValueError("synthetic correspondences need a dataset with ground truth")
    assert dataset.gt_poses is not None and dataset.gt_depth is not None
    rng = np.random.default_rng(seed)
    K = dataset.intrinsics
    frames = list(range(len(dataset))) if frames is None else sorted(frames)
    pool = []
    for index in frames:
        rows, cols = np.nonzero(np.isfinite(dataset.gt_depth[index]))
        if rows.size == 0:
            continue
        pick = rng.choice(rows.size, size=min(points_per_frame, rows.size), replace=False)
        pixels = np.stack([cols[pick], rows[pick]], axis=1) + rng.random((pick.size, 2))
        depth = dataset.gt_depth[index][rows[pick], cols[pick]].astype(float)
        pool.append(backproject_depth(pixels, depth, dataset.gt_poses[index], K))
    points = np.concatenate(pool) if pool else np.zeros((0, 3))

    keypoints: dict[int, np.ndarray] = {}
    point_index: dict[int, np.ndarray] = {}
    for index in frames:
        pixels, depth = project_points(points, dataset.gt_poses[index], K)
        inside = np.all(np.isfinite(pixels), axis=1) & K.in_bounds(
            np.nan_to_num(pixels, nan=-1.0)
        )
        inside &= (pixels[:, 0] < K.width) & (pixels[:, 1] < K.height)
        visible = np.flatnonzero(inside)
        cols = pixels[visible, 0].astype(int)
        rows = pixels[visible, 1].astype(int)
        surface = dataset.gt_depth[index][rows, cols].astype(float)
        visible = visible[np.abs(surface - depth[visible]) < 0.02 * depth[visible]]
        observed = pixels[visible]
        if noise_px > 0:
            observed = observed + rng.normal(0.0, noise_px, size=observed.shape)
            observed = np.clip(observed, 0.0, [K.width, K.height])
        keypoints[index] = observed
        point_index[index] = visible

    matches = {}
    for i, j in window_pairs(frames, window):
        common, ai, aj = np.intersect1d(
            point_index[i], point_index[j], assume_unique=True, return_indices=True
        )
        matches[(i, j)] = np.stack([ai, aj], axis=1)
    LOGGER.info(
        "synthetic correspondences: %d points, %d pairs", len(points), len(matches)
    )
    return Correspondences(keypoints, matches, "synthetic", window)


def _gray(frame: np.ndarray) -> np.ndarray:
    if frame.dtype != np.uint8:
        frame = np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8)
    return cv2.cvtColor(np.ascontiguousarray(frame[..., :3]), cv2.COLOR_RGB2GRAY)


def detect_corners(
    frame: np.ndarray,
    max_corners: int = 300,
    quality: float = 0.01,
    min_distance: float = 4.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Harris corners and their normalized 11x11 patches.

    :returns: ``(pixels (K, 2), patches (K, 121))``; pixels are pixel-centre coordinates
    """
    gray = _gray(frame)
    corners = cv2.goodFeaturesToTrack(
        gray,
        maxCorners=max_corners,
        qualityLevel=quality,
        minDistance=min_distance,
        useHarrisDetector=True,
        k=0.04,
    )
    if corners is None:
        return np.zeros((0, 2)), np.zeros((0, (2 * PATCH_RADIUS + 1) ** 2))
    corners = np.round(corners.reshape(-1, 2)).astype(int)
    height, width = gray.shape
    keep = (
        (corners[:, 0] >= PATCH_RADIUS)
        & (corners[:, 0] < width - PATCH_RADIUS)
        & (corners[:, 1] >= PATCH_RADIUS)
        & (corners[:, 1] < height - PATCH_RADIUS)
    )
    corners = corners[keep]
    offsets = np.arange(-PATCH_RADIUS, PATCH_RADIUS + 1)
    rows = corners[:, 1, None, None] + offsets[None, :, None]
    cols = corners[:, 0, None, None] + offsets[None, None, :]
    patches = gray[rows, cols].reshape(len(corners), -1).astype(np.float64)
    patches -= patches.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(patches, axis=1, keepdims=True)
    textured = norms[:, 0] > 1e-6
    patches = patches[textured] / norms[textured]
    return corners[textured] + 0.5, patches


def match_patches(
    pixels_a: np.ndarray,
    patches_a: np.ndarray,
    pixels_b: np.ndarray,
    patches_b: np.ndarray,
    min_score: float = 0.8,
    search_radius: float | None = None,
) -> np.ndarray:
    """Mutual-best NCC matches; returns ``(M, 2)`` index pairs."""
    if len(patches_a) == 0 or len(patches_b) == 0:
        return np.zeros((0, 2), int)
    scores = patches_a @ patches_b.T
    if search_radius is not None:
        distance = np.linalg.norm(pixels_a[:, None] - pixels_b[None], axis=-1)
        scores = np.where(distance <= search_radius, scores, -np.inf)
    best_b = np.argmax(scores, axis=1)
    best_a = np.argmax(scores, axis=0)
    index_a = np.arange(len(patches_a))
    mutual = best_a[best_b] == index_a
    good = mutual & (scores[index_a, best_b] >= min_score)
    return np.stack([index_a[good], best_b[good]], axis=1)


def detected_correspondences(
    frames: np.ndarray,
    window: int = 30,
    *,
    max_corners: int = 300,
    min_score: float = 0.8,
    search_radius: float | None = None,
    frame_indices: Sequence[int] | None = None,
) -> Correspondences:
    """Harris corners matched by 11x11 normalized cross-correlation."""
    frame_indices = list(range(len(frames))) if frame_indices is None else list(frame_indices)
    if search_radius is None:
        search_radius = 0.25 * float(np.hypot(*frames.shape[1:3]))
    features = {
        index: detect_corners(frames[index], max_corners) for index in frame_indices
    }
    keypoints = {index: pixels for index, (pixels, _) in features.items()}
    matches = {}
    for i, j in window_pairs(frame_indices, window):
        matches[(i, j)] = match_patches(
            features[i][0], features[i][1], features[j][0], features[j][1],
            min_score, search_radius,
        )
    LOGGER.info(
        "detected correspondences: %d frames, mean %.1f corners",
        len(frame_indices),
        np.mean([len(k) for k in keypoints.values()]) if keypoints else 0.0,
    )
    return Correspondences(keypoints, matches, "detected", window)


def build_correspondences(
    source: FlyaroundDataset | np.ndarray,
    window: int = 30,
    mode: Provenance = "synthetic",
    noise_px: float = 0.0,
    *,
    min_matches: int = 8,
    suppress_warnings: Sequence[str] = (),
    **kwargs,
) -> Correspondences:
    """Build correspondences over a sliding window of ``window`` frames.

    ``synthetic`` needs a dataset with ground truth, ``detected`` works on the
    (ideally segmented) frames of a dataset or a raw ``(N, H, W, 3)`` array.
    Frames whose best pair has fewer than ``min_matches`` matches are reported.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1 (got {window})")
    if mode == "synthetic":
        if not isinstance(source, FlyaroundDataset):
            raise TypeError("synthetic correspondences need a FlyaroundDataset")
        correspondences = synthetic_correspondences(source, window, noise_px, **kwargs)
    elif mode == "detected":
        frames = source.frames if isinstance(source, FlyaroundDataset) else source
        correspondences = detected_correspondences(np.asarray(frames), window, **kwargs)
    else:
        raise ValueError(f"unknown correspondence mode {mode!r}")
    for frame in weak_frames(correspondences, min_matches):
        create_warning(
            LOGGER,
            f"frame {frame}: no pair in the window has {min_matches} matches",
            ReconWarnings.SFM_CORRESPONDENCES,
            suppress_warnings=suppress_warnings,
        )
    return correspondences


def weak_frames(correspondences: Correspondences, min_matches: int) -> list[int]:
    """Frames where every pair they belong to has fewer than ``min_matches`` matches."""
    best = dict.fromkeys(correspondences.frames, 0)
    for (i, j), index in correspondences.matches.items():
        best[i] = max(best[i], len(index))
        best[j] = max(best[j], len(index))
    return [frame for frame, count in best.items() if count < min_matches]


def build_tracks(correspondences: Correspondences) -> list[Track]:
    """Chain pairwise matches into tracks with a disjoint-set forest.

    Tracks that would observe one frame twice are discarded.
    """
    nodes = DisjointSet()
    for (i, j), index in correspondences.matches.items():
        for a, b in index:
            nodes.add((i, int(a)))
            nodes.add((j, int(b)))
            nodes.merge((i, int(a)), (j, int(b)))
    tracks: list[Track] = []
    for subset in sorted(nodes.subsets(), key=lambda s: min(s)):
        frames = [frame for frame, _ in subset]
        if len(subset) < 2 or len(set(frames)) != len(frames):
            continue
        tracks.append(
            Track(
                {
                    frame: correspondences.keypoints[frame][kp]
                    for frame, kp in sorted(subset)
                }
            )
        )
    return tracks
