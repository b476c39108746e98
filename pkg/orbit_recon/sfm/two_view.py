"""Relative pose from two views: normalized 8-point inside RANSAC."""

from __future__ import annotations

import dataclasses as dc
import logging

import numpy as np

from ..errors import InsufficientData
from ..geometry import CameraIntrinsics, Pose, triangulate_pairs

LOGGER = logging.getLogger(__name__)

MIN_MATCHES = 8
MIN_INLIERS = 15

_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


@dc.dataclass(frozen=True, eq=False)
class TwoViewResult:
    pose: Pose
    """pose of the second camera in the frame of the first, ``|t| = 1``"""
    inliers: np.ndarray
    """boolean flag per match"""
    cheirality_fraction: float

    @property
    def n_inliers(self) -> int:
        return int(self.inliers.sum())


def _hartley(points: np.ndarray) -> np.ndarray:
    """Similarity moving ``points`` to zero mean and mean norm sqrt(2)."""
    centre = points.mean(axis=0)
    spread = np.mean(np.linalg.norm(points - centre, axis=1))
    scale = np.sqrt(2) / max(spread, 1e-12)
    return np.array(
        [[scale, 0, -scale * centre[0]], [0, scale, -scale * centre[1]], [0, 0, 1.0]]
    )


def _homogeneous(points: np.ndarray) -> np.ndarray:
    return np.concatenate([points, np.ones(points.shape[:-1] + (1,))], axis=-1)


def _eight_point(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Least-squares solutions of ``x2^T E x1 = 0`` for ``(..., M, 3)`` coordinates."""
    A = np.concatenate(
        [x2[..., :, i : i + 1] * x1 for i in range(3)], axis=-1
    )
    _, _, vt = np.linalg.svd(A)
    return vt[..., -1, :].reshape(x1.shape[:-2] + (3, 3))


def _enforce_essential(E: np.ndarray) -> np.ndarray:
    """Project ``(..., 3, 3)`` matrices onto singular values ``(s, s, 0)``."""
    U, S, Vt = np.linalg.svd(E)
    s = 0.5 * (S[..., 0] + S[..., 1])
    D = np.zeros(S.shape[:-1] + (3, 3))
    D[..., 0, 0] = s
    D[..., 1, 1] = s
    return U @ D @ Vt


def sampson_sq(F: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Squared Sampson distances for fundamental matrices ``(..., 3, 3)``
    and homogeneous pixels ``(N, 3)``; output ``(..., N)``.
    """
    Fp1 = np.einsum("...ij,nj->...ni", F, p1)
    Ftp2 = np.einsum("...ji,nj->...ni", F, p2)
    numerator = np.einsum("ni,...ni->...n", p2, Fp1) ** 2
    denominator = Fp1[..., 0] ** 2 + Fp1[..., 1] ** 2 + Ftp2[..., 0] ** 2 + Ftp2[..., 1] ** 2
    return numerator / np.maximum(denominator, 1e-300)


def decompose_essential(E: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """The four ``(R, t)`` candidates of an essential matrix."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U[:, -1] *= -1
    if np.linalg.det(Vt) < 0:
        Vt[-1, :] *= -1
    R1 = U @ _W @ Vt
    R2 = U @ _W.T @ Vt
    t = U[:, 2]
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def estimate_two_view(
    x1: np.ndarray,
    x2: np.ndarray,
    K: CameraIntrinsics,
    *,
    threshold_px: float = 2.0,
    iterations: int = 2000,
    seed: int = 0,
) -> TwoViewResult:
    """Estimate the relative pose between two views from pixel matches.

    :raises InsufficientData: fewer than 8 matches, fewer than 15 inliers or
        no decomposition with most points in front of both cameras
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    n_matches = len(x1)
    if n_matches < MIN_MATCHES:
        raise InsufficientData(f"two-view estimation needs >= {MIN_MATCHES} matches (got {n_matches})")

    n1, n2 = K.normalize(x1), K.normalize(x2)
    T1, T2 = _hartley(n1), _hartley(n2)
    h1 = _homogeneous(n1) @ T1.T
    h2 = _homogeneous(n2) @ T2.T
    p1, p2 = _homogeneous(x1), _homogeneous(x2)
    K_inv = np.linalg.inv(K.matrix)

    def to_fundamental(E_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        E = _enforce_essential(T2.T @ E_hat @ T1)
        return E, K_inv.T @ E @ K_inv

    rng = np.random.default_rng(seed)
    samples = np.argsort(rng.random((iterations, n_matches)), axis=1)[:, :MIN_MATCHES]
    E_hat = _eight_point(h1[samples], h2[samples])
    _, F = to_fundamental(E_hat)
    errors = sampson_sq(F, p1, p2)
    threshold_sq = threshold_px**2
    cost = np.minimum(errors, threshold_sq).sum(axis=1)
    best = int(np.argmin(cost))
    inliers = errors[best] <= threshold_sq

    E = None
    for _ in range(2):
        if inliers.sum() < MIN_MATCHES:
            break
        E_hat = _eight_point(h1[inliers], h2[inliers])
        E, F = to_fundamental(E_hat)
        inliers = sampson_sq(F, p1, p2) <= threshold_sq
    if E is None or inliers.sum() < MIN_INLIERS:
        raise InsufficientData(
            f"two-view estimation found {int(inliers.sum())} inliers (< {MIN_INLIERS})"
        )

    identity = Pose.identity()
    best_pose, best_front = None, -1
    for R, t in decompose_essential(E):
        candidate = Pose.from_matrix(R, t / np.linalg.norm(t))
        points = triangulate_pairs(identity, candidate, n1[inliers], n2[inliers])
        front = int(
            np.sum(
                np.isfinite(points).all(axis=1)
                & (points[:, 2] > 0)
                & (candidate.apply(points)[:, 2] > 0)
            )
        )
        if front > best_front:
            best_pose, best_front = candidate, front
    assert best_pose is not None
    fraction = best_front / int(inliers.sum())
    if fraction < 0.5:
        raise InsufficientData(
            f"only {fraction:.0%} of the inliers lie in front of both cameras"
        )
    LOGGER.debug(
        "two-view: %d/%d inliers, cheirality %.2f", inliers.sum(), n_matches, fraction
    )
    return TwoViewResult(best_pose, inliers, fraction)
