"""Absolute pose from 2D-3D correspondences: DLT inside RANSAC plus a polish."""

from __future__ import annotations

import dataclasses as dc

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from ..errors import InsufficientData
from ..geometry import CameraIntrinsics, Pose

MIN_CORRESPONDENCES = 6
MIN_INLIERS = 10


@dc.dataclass(frozen=True, eq=False)
class PnPResult:
    pose: Pose
    inliers: np.ndarray
    mean_error_px: float
    """mean reprojection error over the inliers"""

    @property
    def n_inliers(self) -> int:
        return int(self.inliers.sum())


def _dlt(X: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotations and translations from ``(..., M, 4)`` points and ``(..., M, 2)``
    normalized image coordinates.
    """
    zeros = np.zeros_like(X)
    rows_u = np.concatenate([X, zeros, -x[..., 0:1] * X], axis=-1)
    rows_v = np.concatenate([zeros, X, -x[..., 1:2] * X], axis=-1)
    A = np.concatenate([rows_u, rows_v], axis=-2)
    _, _, vt = np.linalg.svd(A)
    P = vt[..., -1, :].reshape(X.shape[:-2] + (3, 4))
    sign = np.sign(np.linalg.det(P[..., :3]))
    P = P * np.where(sign == 0, 1.0, sign)[..., None, None]
    U, S, Vt = np.linalg.svd(P[..., :3])
    R = U @ Vt
    scale = S.mean(axis=-1)
    t = P[..., 3] / scale[..., None]
    return R, t


def _errors(R: np.ndarray, t: np.ndarray, points: np.ndarray, pixels: np.ndarray, K):
    cam = np.einsum("...ij,nj->...ni", R, points) + t[..., None, :]
    depth = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        projected = K.focal_px * cam[..., :2] / depth[..., None] + K.principal_point
    errors = np.linalg.norm(projected - pixels, axis=-1)
    return np.where(depth > 1e-9, errors, np.inf)


def register_pnp(
    points: np.ndarray,
    pixels: np.ndarray,
    K: CameraIntrinsics,
    *,
    threshold_px: float = 2.0,
    iterations: int = 1000,
    seed: int = 0,
) -> PnPResult:
    """Estimate a camera pose from world points and their observed pixels.

    :raises InsufficientData: fewer than 6 correspondences or fewer than 10 inliers
    """
    points = np.asarray(points, dtype=float)
    pixels = np.asarray(pixels, dtype=float)
    n_points = len(points)
    if n_points < MIN_CORRESPONDENCES:
        raise InsufficientData(
            f"PnP needs >= {MIN_CORRESPONDENCES} correspondences (got {n_points})"
        )
    centre = points.mean(axis=0)
    scale = np.sqrt(3) / max(np.mean(np.linalg.norm(points - centre, axis=1)), 1e-12)
    T = np.diag([scale, scale, scale, 1.0])
    T[:3, 3] = -scale * centre
    X = np.concatenate([points, np.ones((n_points, 1))], axis=1) @ T.T
    x = K.normalize(pixels)

    def hypotheses(index: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        R_hat, t_hat = _dlt(X[index], x[index])
        # undo the point normalization: x_cam ~ R_hat (s (X - c)) + t_hat
        return R_hat, (t_hat - scale * np.einsum("...ij,j->...i", R_hat, centre)) / scale

    rng = np.random.default_rng(seed)
    samples = np.argsort(rng.random((iterations, n_points)), axis=1)[:, :MIN_CORRESPONDENCES]
    R, t = hypotheses(samples)
    errors = _errors(R, t, points, pixels, K)
    cost = np.minimum(errors, threshold_px).sum(axis=1)
    best = int(np.argmin(cost))
    inliers = errors[best] <= threshold_px
    R_best, t_best = R[best], t[best]
    if inliers.sum() >= MIN_CORRESPONDENCES:
        R_all, t_all = hypotheses(np.flatnonzero(inliers))
        refit_inliers = _errors(R_all, t_all, points, pixels, K) <= threshold_px
        if refit_inliers.sum() >= inliers.sum():
            R_best, t_best, inliers = R_all, t_all, refit_inliers
    if inliers.sum() < MIN_INLIERS:
        raise InsufficientData(f"PnP found {int(inliers.sum())} inliers (< {MIN_INLIERS})")

    def residuals(params: np.ndarray) -> np.ndarray:
        rotation = Rotation.from_rotvec(params[:3]).as_matrix()
        cam = points[inliers] @ rotation.T + params[3:]
        projected = K.focal_px * cam[:, :2] / cam[:, 2:] + K.principal_point
        return (projected - pixels[inliers]).ravel()

    start = np.concatenate([Rotation.from_matrix(R_best).as_rotvec(), t_best])
    solution = least_squares(residuals, start, method="lm")
    R_best = Rotation.from_rotvec(solution.x[:3]).as_matrix()
    t_best = solution.x[3:]
    errors = _errors(R_best, t_best, points, pixels, K)
    inliers = errors <= threshold_px
    if inliers.sum() < MIN_INLIERS:
        raise InsufficientData(f"PnP found {int(inliers.sum())} inliers (< {MIN_INLIERS})")
    return PnPResult(Pose.from_matrix(R_best, t_best), inliers, float(errors[inliers].mean()))
