"""Sparse Levenberg-Marquardt bundle adjustment with a Huber loss.

Points are eliminated with a Schur complement, so each damped step solves a
dense system over the free camera parameters only.
"""

from __future__ import annotations

import dataclasses as dc
import logging
from collections.abc import Iterable, Sequence

import numpy as np
from scipy import linalg, sparse
from scipy.spatial.transform import Rotation

from ..geometry import Pose, skew
from ..warnings_ import ReconWarnings, create_warning
from .reconstruction import Reconstruction

LOGGER = logging.getLogger(__name__)

FOCAL = (0,)
FOCAL_AND_PRINCIPAL_POINT = (0, 1, 2)


@dc.dataclass(frozen=True)
class BundleParams:
    max_iterations: int = 50
    huber_px: float = 2.0
    relative_tolerance: float = 1e-8
    initial_damping: float = 1e-4
    min_damping: float = 1e-9
    max_damping: float = 1e12
    max_consecutive_increases: int = 5


@dc.dataclass(frozen=True)
class BundleReport:
    initial_cost: float
    final_cost: float
    iterations: int
    accepted_steps: int
    diverged: bool = False


@dc.dataclass
class _State:
    frames: list[int]
    rotations: np.ndarray  # (F, 3, 3)
    translations: np.ndarray  # (F, 3)
    points: np.ndarray  # (P, 3)
    intrinsics: np.ndarray  # f, cx, cy

    def copy(self) -> _State:
        return _State(
            self.frames,
            self.rotations.copy(),
            self.translations.copy(),
            self.points.copy(),
            self.intrinsics.copy(),
        )


def huber_cost(errors: np.ndarray, delta: float) -> float:
    quadratic = errors <= delta
    return float(
        np.sum(np.where(quadratic, 0.5 * errors**2, delta * (errors - 0.5 * delta)))
    )


def bundle_cost(recon: Reconstruction, huber_px: float = 2.0) -> float:
    """Robust reprojection cost of a reconstruction."""
    _, _, errors, _ = recon.residuals()
    return huber_cost(errors, huber_px)


class _Problem:
    def __init__(
        self,
        recon: Reconstruction,
        variable_frames: set[int],
        intrinsic_columns: Sequence[int] = (),
    ):
        K = recon.intrinsics
        self.frames = sorted(recon.poses)
        frame_slot = {frame: i for i, frame in enumerate(self.frames)}
        self.intrinsic_columns = list(intrinsic_columns)
        point_ids = sorted(
            track_id
            for track_id in recon.points
            if variable_frames.intersection(recon.observations(track_id))
            or self.intrinsic_columns
        )
        self.point_ids = point_ids
        track_ids, frames, pixels = recon.observation_arrays(point_ids)
        point_slot = {track_id: i for i, track_id in enumerate(point_ids)}
        self.obs_frame = np.array([frame_slot[f] for f in frames], dtype=int)
        self.obs_point = np.array([point_slot[t] for t in track_ids], dtype=int)
        self.pixels = pixels

        self.variable_slots = np.array(
            sorted(frame_slot[f] for f in variable_frames if f in frame_slot), dtype=int
        )
        pose_column = np.full(len(self.frames), -1)
        pose_column[self.variable_slots] = 6 * np.arange(len(self.variable_slots))
        self.pose_column = pose_column
        self.point_offset = 6 * len(self.variable_slots)
        self.intrinsics_offset = self.point_offset + 3 * len(point_ids)
        self.n_params = self.intrinsics_offset + len(self.intrinsic_columns)
        self.camera_columns = np.r_[
            0 : self.point_offset, self.intrinsics_offset : self.n_params
        ].astype(int)

        poses = [recon.poses[f] for f in self.frames]
        self.state = _State(
            self.frames,
            np.array([p.R for p in poses]),
            np.array([p.translation for p in poses]),
            np.array([recon.points[t] for t in point_ids]).reshape(-1, 3),
            np.array([K.focal_px, K.cx, K.cy]),
        )

    def project(self, state: _State) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        R = state.rotations[self.obs_frame]
        rotated = np.einsum("nij,nj->ni", R, state.points[self.obs_point])
        cam = rotated + state.translations[self.obs_frame]
        f, cx, cy = state.intrinsics
        with np.errstate(divide="ignore", invalid="ignore"):
            projected = f * cam[:, :2] / cam[:, 2:] + np.array([cx, cy])
        return projected - self.pixels, cam, rotated

    def errors(self, state: _State) -> np.ndarray:
        residual, cam, _ = self.project(state)
        errors = np.linalg.norm(residual, axis=1)
        return np.where((cam[:, 2] > 1e-9) & np.isfinite(errors), errors, np.inf)

    def linearize(self, state: _State, delta: float):
        residual, cam, rotated = self.project(state)
        errors = np.linalg.norm(residual, axis=1)
        weights = np.where(errors <= delta, 1.0, delta / np.maximum(errors, 1e-300))
        sqrt_w = np.sqrt(weights)

        f = state.intrinsics[0]
        x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
        n_obs = len(x)
        d_proj = np.zeros((n_obs, 2, 3))
        d_proj[:, 0, 0] = f / z
        d_proj[:, 0, 2] = -f * x / z**2
        d_proj[:, 1, 1] = f / z
        d_proj[:, 1, 2] = -f * y / z**2

        rows_base = 2 * np.arange(n_obs)
        blocks_rows, blocks_cols, blocks_data = [], [], []

        def add(block: np.ndarray, columns: np.ndarray, select: np.ndarray):
            # block: (n, 2, k) for observations ``select``; columns: (n,) first column
            rows = rows_base[select][:, None, None] + np.arange(2)[None, :, None]
            cols = columns[:, None, None] + np.arange(block.shape[2])[None, None, :]
            blocks_rows.append(np.broadcast_to(rows, block.shape).ravel())
            blocks_cols.append(np.broadcast_to(cols, block.shape).ravel())
            blocks_data.append((block * sqrt_w[select][:, None, None]).ravel())

        pose_cols = self.pose_column[self.obs_frame]
        moving = pose_cols >= 0
        if np.any(moving):
            d_rot = -d_proj[moving] @ skew(rotated[moving])
            d_trans = d_proj[moving]
            add(np.concatenate([d_rot, d_trans], axis=2), pose_cols[moving], moving)
        everything = np.ones(n_obs, bool)
        d_point = d_proj @ state.rotations[self.obs_frame]
        add(d_point, self.point_offset + 3 * self.obs_point, everything)
        if self.intrinsic_columns:
            d_k = np.zeros((n_obs, 2, 3))
            d_k[:, 0, 0] = x / z
            d_k[:, 1, 0] = y / z
            d_k[:, 0, 1] = 1.0
            d_k[:, 1, 2] = 1.0
            add(d_k[:, :, self.intrinsic_columns], np.full(n_obs, self.intrinsics_offset), everything)

        J = sparse.csr_matrix(
            (
                np.concatenate(blocks_data),
                (np.concatenate(blocks_rows), np.concatenate(blocks_cols)),
            ),
            shape=(2 * n_obs, self.n_params),
        )
        r = (residual * sqrt_w[:, None]).ravel()
        return J, r

    def solve(self, H: sparse.csr_matrix, rhs: np.ndarray, damping: float) -> np.ndarray | None:
        """Solve ``(H + damping * diag(H)) step = rhs`` by eliminating the points.

        Returns ``None`` when the reduced camera system is singular.
        """
        diagonal = H.diagonal()
        A = (H + sparse.diags(damping * diagonal + 1e-12)).tocsr()
        points = slice(self.point_offset, self.intrinsics_offset)
        cams = self.camera_columns
        n_points = len(self.point_ids)

        A_pp = A[points, points]
        blocks = np.zeros((n_points, 3, 3))
        base = 3 * np.arange(n_points)
        for d in range(3):
            band = A_pp.diagonal(d)
            for i in range(3 - d):
                blocks[:, i, i + d] = blocks[:, i + d, i] = band[base + i]
        try:
            inverse = np.linalg.inv(blocks)
        except np.linalg.LinAlgError:
            return None
        W = sparse.bsr_matrix(
            (inverse, np.arange(n_points), np.arange(n_points + 1)),
            shape=(3 * n_points, 3 * n_points),
        ).tocsr()

        step = np.zeros(self.n_params)
        rhs_p = rhs[points]
        if cams.size == 0:
            step[points] = W @ rhs_p
            return step
        A_cp = A[cams][:, points]
        A_cp_W = A_cp @ W
        S = A[cams][:, cams].toarray() - (A_cp_W @ A_cp.T).toarray()
        try:
            step_c = linalg.solve(S, rhs[cams] - A_cp_W @ rhs_p, assume_a="sym")
        except (linalg.LinAlgError, ValueError):
            return None
        step[cams] = step_c
        step[points] = W @ (rhs_p - A_cp.T @ step_c)
        return step

    def apply(self, state: _State, step: np.ndarray) -> _State:
        new = state.copy()
        if self.variable_slots.size:
            pose_step = step[: self.point_offset].reshape(-1, 6)
            slots = self.variable_slots
            new.rotations[slots] = (
                Rotation.from_rotvec(pose_step[:, :3]).as_matrix() @ state.rotations[slots]
            )
            new.translations[slots] = state.translations[slots] + pose_step[:, 3:]
        new.points = state.points + step[self.point_offset : self.intrinsics_offset].reshape(-1, 3)
        if self.intrinsic_columns:
            new.intrinsics[self.intrinsic_columns] += step[self.intrinsics_offset :]
        return new


def _restore_scale(recon: Reconstruction, baseline: float) -> None:
    """Rescale about the reference camera so the seed baseline keeps its length."""
    ref, other = recon.reference_frame, recon.baseline_frame
    if ref is None or other is None or ref not in recon.poses or other not in recon.poses:
        return
    c0 = recon.poses[ref].center
    current = np.linalg.norm(recon.poses[other].center - c0)
    if current < 1e-12 or not np.isfinite(current):
        return
    s = baseline / current
    for frame, pose in recon.poses.items():
        if frame == ref:
            continue
        recon.poses[frame] = Pose.from_center(pose.R, c0 + s * (pose.center - c0))
    for track_id, point in recon.points.items():
        recon.points[track_id] = c0 + s * (point - c0)


def bundle_adjust_with_report(
    recon: Reconstruction,
    fix_intrinsics: bool = True,
    *,
    refine_principal_point: bool = False,
    variable_frames: Iterable[int] | None = None,
    params: BundleParams | None = None,
    suppress_warnings: Sequence[str] = (),
) -> tuple[Reconstruction, BundleReport]:
    """Refine poses, points and optionally the intrinsics.

    With ``fix_intrinsics=False`` the focal length is refined, and the
    principal point too when ``refine_principal_point`` is set.
    The reference frame never moves. When every other frame is free, the
    scale gauge is restored afterwards from the seed baseline.
    A run of ``params.max_consecutive_increases`` trial steps that all raise
    the cost stops the optimisation with a divergence warning.
    """
    params = params or BundleParams()
    recon = recon.copy()
    if variable_frames is None:
        variable = set(recon.poses)
    else:
        variable = set(variable_frames) & set(recon.poses)
    variable.discard(recon.reference_frame)  # type: ignore[arg-type]
    intrinsic_columns: tuple[int, ...] = ()
    if not fix_intrinsics:
        intrinsic_columns = FOCAL_AND_PRINCIPAL_POINT if refine_principal_point else FOCAL
    problem = _Problem(recon, variable, intrinsic_columns)
    if len(problem.obs_frame) == 0:
        return recon, BundleReport(0.0, 0.0, 0, 0)

    baseline = None
    if recon.reference_frame in recon.poses and recon.baseline_frame in recon.poses:
        baseline = float(
            np.linalg.norm(
                recon.poses[recon.baseline_frame].center
                - recon.poses[recon.reference_frame].center  # type: ignore[index]
            )
        )

    delta = params.huber_px
    state = problem.state
    cost = huber_cost(problem.errors(state), delta)
    initial_cost = cost
    damping = params.initial_damping
    accepted = 0
    increases = 0
    diverged = False
    iteration = 0
    for iteration in range(1, params.max_iterations + 1):
        J, r = problem.linearize(state, delta)
        H = (J.T @ J).tocsr()
        g = J.T @ r
        step_accepted = False
        while damping <= params.max_damping:
            step = problem.solve(H, -g, damping)
            new_cost = np.inf
            if step is not None:
                candidate = problem.apply(state, step)
                new_cost = huber_cost(problem.errors(candidate), delta)
            if np.isfinite(new_cost) and new_cost < cost:
                damping = max(damping / 10, params.min_damping)
                increases = 0
                step_accepted = True
                break
            if not np.isfinite(new_cost) or (
                new_cost - cost > params.relative_tolerance * max(cost, 1.0)
            ):
                increases += 1
                if increases >= params.max_consecutive_increases:
                    diverged = True
                    break
            damping *= 10
        if not step_accepted:
            break
        accepted += 1
        improvement = (cost - new_cost) / max(cost, 1e-300)
        state, cost = candidate, new_cost
        if improvement < params.relative_tolerance:
            break
    if diverged:
        create_warning(
            LOGGER,
            f"bundle adjustment cost rose on {increases} consecutive steps; "
            f"stopped after {accepted} accepted steps",
            ReconWarnings.BA_DIVERGENCE,
            suppress_warnings=suppress_warnings,
        )
    if not np.isfinite(cost):
        create_warning(
            LOGGER,
            "bundle adjustment produced a non-finite cost",
            ReconWarnings.BA_DIVERGENCE,
            suppress_warnings=suppress_warnings,
        )
        return recon, BundleReport(initial_cost, initial_cost, iteration, 0, True)

    for slot in problem.variable_slots:
        recon.poses[problem.frames[slot]] = Pose.from_matrix(
            state.rotations[slot], state.translations[slot]
        )
    for i, track_id in enumerate(problem.point_ids):
        recon.points[track_id] = state.points[i]
    if intrinsic_columns:
        f, cx, cy = state.intrinsics
        recon.intrinsics = recon.intrinsics.copy(focal_px=float(f), cx=float(cx), cy=float(cy))
    if baseline is not None and variable == set(recon.poses) - {recon.reference_frame}:
        _restore_scale(recon, baseline)
    LOGGER.debug(
        "bundle adjustment: cost %.6g -> %.6g in %d iterations (%d accepted)",
        initial_cost,
        cost,
        iteration,
        accepted,
    )
    return recon, BundleReport(initial_cost, cost, iteration, accepted, diverged)


def bundle_adjust(
    recon: Reconstruction,
    fix_intrinsics: bool = True,
    **kwargs,
) -> Reconstruction:
    """Bundle-adjusted copy of ``recon``; see :func:`bundle_adjust_with_report`."""
    return bundle_adjust_with_report(recon, fix_intrinsics, **kwargs)[0]
