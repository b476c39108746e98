"""Similarity alignment of estimated camera trajectories to ground truth."""

from __future__ import annotations

import dataclasses as dc
import logging
from collections.abc import Mapping, Sequence

import numpy as np

from ..errors import InsufficientData
from ..geometry import Pose, rotation_angle_deg
from ..warnings_ import ReconWarnings, create_warning

LOGGER = logging.getLogger(__name__)

MIN_FRAMES = 3


@dc.dataclass(frozen=True, eq=False)
class Sim3Alignment:
    """``x_gt = scale * rotation @ x_est + translation`` plus per-frame errors."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    frames: list[int]
    rotation_errors_deg: np.ndarray
    translation_errors: np.ndarray
    degenerate: bool
    """camera centres are collinear, so the rotation about their line is free"""

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation

    def apply_pose(self, pose: Pose) -> Pose:
        """Express an estimated world-to-camera pose in ground-truth coordinates."""
        R = pose.R @ self.rotation.T
        return Pose.from_center(R, self.apply(pose.center))


def umeyama(source: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Least-squares similarity mapping ``source`` onto ``target`` (both ``(N, 3)``).

    :returns: scale, rotation, translation and the singular values of the
        cross-covariance
    """
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    src, tgt = source - mu_s, target - mu_t
    covariance = tgt.T @ src / len(source)
    U, S, Vt = np.linalg.svd(covariance)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1
    R = U @ D @ Vt
    variance = np.mean(np.sum(src**2, axis=1))
    scale = float(np.trace(np.diag(S) @ D) / variance) if variance > 0 else 1.0
    t = mu_t - scale * R @ mu_s
    return scale, R, t, S


def align_sim3(
    est_poses: Mapping[int, Pose],
    gt_poses: Mapping[int, Pose] | Sequence[Pose],
    *,
    suppress_warnings: Sequence[str] = (),
) -> Sim3Alignment:
    """Align estimated camera centres to ground truth and report pose errors.

    :raises InsufficientData: fewer than three common frames
    """
    if not isinstance(gt_poses, Mapping):
        gt_poses = dict(enumerate(gt_poses))
    frames = sorted(set(est_poses) & set(gt_poses))
    if len(frames) < MIN_FRAMES:
        raise InsufficientData(
            f"similarity alignment needs >= {MIN_FRAMES} common frames (got {len(frames)})"
        )
    est = np.array([est_poses[f].center for f in frames])
    gt = np.array([gt_poses[f].center for f in frames])
    scale, R, t, _ = umeyama(est, gt)

    spread = np.linalg.svd(gt - gt.mean(axis=0), compute_uv=False)
    degenerate = bool(spread[1] <= 1e-9 * max(spread[0], 1e-300))
    if degenerate:
        create_warning(
            LOGGER,
            f"camera centres of {len(frames)} frames are collinear; "
            "rotation about their line is unconstrained",
            ReconWarnings.DEGENERATE_ALIGNMENT,
            suppress_warnings=suppress_warnings,
        )
    alignment = Sim3Alignment(scale, R, t, frames, np.zeros(0), np.zeros(0), degenerate)
    rotation_errors = np.array(
        [
            rotation_angle_deg(gt_poses[f].R @ alignment.apply_pose(est_poses[f]).R.T)
            for f in frames
        ]
    )
    translation_errors = np.linalg.norm(alignment.apply(est) - gt, axis=1)
    return dc.replace(
        alignment,
        rotation_errors_deg=rotation_errors,
        translation_errors=translation_errors,
    )
