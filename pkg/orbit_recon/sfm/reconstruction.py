"""The sparse reconstruction and its registration statistics."""

from __future__ import annotations

import dataclasses as dc
from typing import TypedDict

import numpy as np

from ..geometry import CameraIntrinsics, Pose, project_points
from .correspondences import Track


class RegistrationStats(TypedDict):
    """Summary of a reconstruction, as written to ``stats.json``."""

    registered_frames: int
    total_frames: int
    sparse_points: int
    mean_reprojection_error_px: float
    focal_px: float
    principal_point: list[float]
    estimated_dimensions: list[float]
    """twice the principal point"""
    nominal_dimensions: list[int]


@dc.dataclass(eq=False)
class Reconstruction:
    """Registered poses, triangulated tracks and the shared intrinsics.

    ``points`` is keyed by track index. An observation ``(track, frame)`` is used
    when the frame is registered and the observation has not been rejected
    as an outlier.
    """

    intrinsics: CameraIntrinsics
    tracks: list[Track]
    poses: dict[int, Pose] = dc.field(default_factory=dict)
    points: dict[int, np.ndarray] = dc.field(default_factory=dict)
    rejected: set[tuple[int, int]] = dc.field(default_factory=set)
    unregistered: dict[int, str] = dc.field(default_factory=dict)
    frames: list[int] = dc.field(default_factory=list)
    """all frames offered to the reconstruction"""
    reference_frame: int | None = None
    baseline_frame: int | None = None

    def copy(self) -> Reconstruction:
        return dc.replace(
            self,
            poses=dict(self.poses),
            points={k: v.copy() for k, v in self.points.items()},
            rejected=set(self.rejected),
            unregistered=dict(self.unregistered),
            frames=list(self.frames),
        )

    def observations(self, track_id: int) -> dict[int, np.ndarray]:
        return {
            frame: pixel
            for frame, pixel in self.tracks[track_id].observations.items()
            if frame in self.poses and (track_id, frame) not in self.rejected
        }

    def observation_arrays(
        self, track_ids=None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(track ids, frames, pixels)`` of every used observation."""
        tracks, frames, pixels = [], [], []
        for track_id in sorted(self.points) if track_ids is None else track_ids:
            for frame, pixel in self.observations(track_id).items():
                tracks.append(track_id)
                frames.append(frame)
                pixels.append(pixel)
        if not tracks:
            return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 2))
        return np.array(tracks), np.array(frames), np.array(pixels)

    def residuals(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Reprojection error norms (``inf`` behind the camera) per observation.

        :returns: ``(track ids, frames, errors, depths)``
        """
        track_ids, frames, pixels = self.observation_arrays()
        errors = np.empty(len(track_ids))
        depths = np.empty(len(track_ids))
        for frame in np.unique(frames):
            select = frames == frame
            points = np.array([self.points[t] for t in track_ids[select]])
            projected, depth = project_points(points, self.poses[int(frame)], self.intrinsics)
            error = np.linalg.norm(projected - pixels[select], axis=1)
            errors[select] = np.where(np.isfinite(error), error, np.inf)
            depths[select] = depth
        return track_ids, frames, errors, depths

    def prune(self, max_error_px: float) -> int:
        """Reject observations above ``max_error_px`` or behind the camera, then
        drop points left with fewer than two observations. Returns the number
        of removed points.
        """
        track_ids, frames, errors, depths = self.residuals()
        bad = (errors > max_error_px) | (depths <= 0)
        self.rejected.update(zip(track_ids[bad].tolist(), frames[bad].tolist()))
        removed = 0
        for track_id in list(self.points):
            if len(self.observations(track_id)) < 2:
                del self.points[track_id]
                removed += 1
        return removed

    def mean_reprojection_error(self) -> float:
        _, _, errors, _ = self.residuals()
        return float(errors.mean()) if errors.size else float("nan")

    def stats(self) -> RegistrationStats:
        K = self.intrinsics
        return {
            "registered_frames": len(self.poses),
            "total_frames": len(self.frames),
            "sparse_points": len(self.points),
            "mean_reprojection_error_px": self.mean_reprojection_error(),
            "focal_px": K.focal_px,
            "principal_point": [K.cx, K.cy],
            "estimated_dimensions": [2 * K.cx, 2 * K.cy],
            "nominal_dimensions": [K.width, K.height],
        }

    def point_array(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 3))
        return np.array([self.points[k] for k in sorted(self.points)])
