"""Incremental structure from motion over sliding-window correspondences."""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Sequence

import numpy as np
from tqdm.auto import tqdm

from ..config.main import SfmConfig
from ..errors import DegenerateGeometry, InsufficientData, SeedFailure
from ..geometry import CameraIntrinsics, Pose, angle_between_deg, triangulate
from ..warnings_ import ReconWarnings, create_warning
from .bundle import BundleParams, bundle_adjust_with_report
from .correspondences import Correspondences, build_tracks
from .pnp import register_pnp
from .reconstruction import Reconstruction
from .two_view import estimate_two_view

LOGGER = logging.getLogger(__name__)

MAX_SEED_ATTEMPTS = 10


def _shared_tracks(recon: Reconstruction, i: int, j: int) -> list[int]:
    return [
        track_id
        for track_id, track in enumerate(recon.tracks)
        if i in track.observations and j in track.observations
    ]


def _seed_candidates(frames: list[int], recon: Reconstruction, window: int):
    """Frame pairs to try as seed, adjacent pairs first, most shared tracks first."""
    shared: dict[tuple[int, int], int] = defaultdict(int)
    for track in recon.tracks:
        seen = sorted(track.observations)
        for a, i in enumerate(seen):
            for j in seen[a + 1 :]:
                shared[(i, j)] += 1
    position = {frame: k for k, frame in enumerate(frames)}
    for gap in range(1, max(2, min(window, len(frames) - 1) + 1)):
        pairs = [
            (i, j)
            for (i, j), count in shared.items()
            if position[j] - position[i] == gap and count >= 8
        ]
        pairs.sort(key=lambda pair: (-shared[pair], pair))
        yield from pairs[:MAX_SEED_ATTEMPTS]


def _try_seed(recon: Reconstruction, i: int, j: int, config: SfmConfig, seed: int) -> bool:
    track_ids = _shared_tracks(recon, i, j)
    x1 = np.array([recon.tracks[t].observations[i] for t in track_ids])
    x2 = np.array([recon.tracks[t].observations[j] for t in track_ids])
    K = recon.intrinsics
    try:
        result = estimate_two_view(
            x1,
            x2,
            K,
            threshold_px=config.ransac_threshold_px,
            iterations=config.ransac_iterations,
            seed=seed,
        )
    except InsufficientData as exc:
        LOGGER.debug("seed pair (%d, %d) rejected: %s", i, j, exc)
        return False

    poses = {i: Pose.identity(), j: result.pose}
    points: dict[int, np.ndarray] = {}
    angles = []
    for track_id, inlier in zip(track_ids, result.inliers):
        if not inlier:
            continue
        observations = [(poses[f], K, recon.tracks[track_id].observations[f]) for f in (i, j)]
        point = _checked_point(observations, config)
        if point is None:
            continue
        points[track_id] = point
        angles.append(
            float(angle_between_deg(point - poses[i].center, point - poses[j].center))
        )
    if len(points) < 8 or np.median(angles) < config.min_seed_angle_deg:
        LOGGER.debug(
            "seed pair (%d, %d) rejected: %d points, median angle %.2f deg",
            i,
            j,
            len(points),
            np.median(angles) if angles else 0.0,
        )
        return False
    recon.poses.update(poses)
    recon.points.update(points)
    recon.reference_frame, recon.baseline_frame = i, j
    LOGGER.info("seeded with frames %d and %d (%d points)", i, j, len(points))
    return True


def _checked_point(observations, config: SfmConfig) -> np.ndarray | None:
    """Triangulate and accept only points in front of every camera, seen under a
    sufficient angle and within the prune threshold.
    """
    try:
        point = triangulate(observations)
    except (DegenerateGeometry, InsufficientData):
        return None
    if not np.all(np.isfinite(point)):
        return None
    centres = np.array([pose.center for pose, _, _ in observations])
    rays = point - centres
    if angle_between_deg(rays[:, None], rays[None, :]).max() < config.min_track_angle_deg:
        return None
    for pose, K, pixel in observations:
        cam = pose.apply(point)
        if cam[2] <= 0:
            return None
        error = np.linalg.norm(K.focal_px * cam[:2] / cam[2] + K.principal_point - pixel)
        if error > config.prune_threshold_px:
            return None
    return point


def _triangulate_new(recon: Reconstruction, track_ids: Sequence[int], config: SfmConfig) -> int:
    added = 0
    for track_id in track_ids:
        if track_id in recon.points:
            continue
        seen = recon.observations(track_id)
        if len(seen) < 2:
            continue
        point = _checked_point(
            [(recon.poses[f], recon.intrinsics, pixel) for f, pixel in seen.items()], config
        )
        if point is not None:
            recon.points[track_id] = point
            added += 1
    return added


def _adjust(
    recon: Reconstruction,
    config: SfmConfig,
    iterations: int,
    *,
    variable_frames=None,
    fix_intrinsics: bool = True,
    suppress_warnings: Sequence[str] = (),
) -> Reconstruction:
    params = BundleParams(max_iterations=iterations, huber_px=config.huber_px)
    recon, _ = bundle_adjust_with_report(
        recon,
        fix_intrinsics,
        refine_principal_point=config.refine_principal_point,
        variable_frames=variable_frames,
        params=params,
        suppress_warnings=suppress_warnings,
    )
    recon.prune(config.prune_threshold_px)
    return recon


def run_incremental_sfm(
    correspondences: Correspondences,
    K_init: CameraIntrinsics,
    config: SfmConfig | None = None,
    *,
    seed: int = 0,
    suppress_warnings: Sequence[str] = (),
    show_progress: bool = False,
) -> Reconstruction:
    """Register every frame it can, starting from the best two-view seed.

    Each registration is followed by triangulation of newly observed tracks
    and a local bundle adjustment; a global adjustment runs every
    ``config.global_ba_every`` registrations, and a final one (optionally
    refining the intrinsics) closes the reconstruction.

    :raises InsufficientData: fewer than two frames with keypoints
    :raises SeedFailure: no frame pair yields a valid two-view estimate
    """
    config = config or SfmConfig()
    frames = [f for f in correspondences.frames if len(correspondences.keypoints[f])]
    if len(frames) < 2:
        raise InsufficientData(f"structure from motion needs >= 2 frames (got {len(frames)})")
    tracks = build_tracks(correspondences)
    recon = Reconstruction(K_init, tracks, frames=list(correspondences.frames))
    frame_tracks: dict[int, list[int]] = defaultdict(list)
    for track_id, track in enumerate(tracks):
        for frame in track.observations:
            frame_tracks[frame].append(track_id)

    for attempt, (i, j) in enumerate(_seed_candidates(frames, recon, correspondences.window)):
        if _try_seed(recon, i, j, config, seed + attempt):
            break
    else:
        raise SeedFailure("no frame pair yields a valid two-view estimate")
    recon = _adjust(recon, config, config.global_ba_iterations, suppress_warnings=suppress_warnings)

    order = [recon.reference_frame, recon.baseline_frame]
    failures: dict[int, str] = {}
    progress = tqdm(
        total=len(recon.frames), initial=2, desc="register", disable=not show_progress
    )
    while True:
        candidates = [f for f in recon.frames if f not in recon.poses and f not in failures]
        if not candidates:
            break
        counts = {
            f: sum(1 for t in frame_tracks[f] if t in recon.points) for f in candidates
        }
        frame = max(candidates, key=lambda f: (counts[f], -f))
        track_ids = [t for t in frame_tracks[frame] if t in recon.points]
        try:
            result = register_pnp(
                np.array([recon.points[t] for t in track_ids]).reshape(-1, 3),
                np.array([tracks[t].observations[frame] for t in track_ids]).reshape(-1, 2),
                recon.intrinsics,
                threshold_px=config.ransac_threshold_px,
                iterations=config.pnp_iterations,
                seed=seed + frame,
            )
        except InsufficientData as exc:
            failures[frame] = str(exc)
            continue
        recon.poses[frame] = result.pose
        for track_id, inlier in zip(track_ids, result.inliers):
            if not inlier:
                recon.rejected.add((track_id, frame))
        # new points may rescue frames that failed so far
        failures.clear()
        order.append(frame)
        _triangulate_new(recon, frame_tracks[frame], config)
        recon = _adjust(
            recon,
            config,
            config.local_ba_iterations,
            variable_frames=order[-config.local_ba_frames :],
            suppress_warnings=suppress_warnings,
        )
        if len(recon.poses) % config.global_ba_every == 0:
            recon = _adjust(
                recon, config, config.global_ba_iterations, suppress_warnings=suppress_warnings
            )
        progress.update(1)
    progress.close()

    recon = _adjust(
        recon,
        config,
        config.final_ba_iterations,
        fix_intrinsics=not config.refine_intrinsics,
        suppress_warnings=suppress_warnings,
    )
    for frame in recon.frames:
        if frame in recon.poses:
            continue
        reason = failures.get(frame, "no keypoints")
        recon.unregistered[frame] = reason
        create_warning(
            LOGGER,
            f"frame {frame} not registered: {reason}",
            ReconWarnings.FRAME_UNREGISTERED,
            suppress_warnings=suppress_warnings,
        )
    stats = recon.stats()
    LOGGER.info(
        "registered %d/%d frames, %d points, mean reprojection error %.3f px",
        stats["registered_frames"],
        stats["total_frames"],
        stats["sparse_points"],
        stats["mean_reprojection_error_px"],
    )
    return recon
