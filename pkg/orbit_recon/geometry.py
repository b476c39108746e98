"""Pinhole cameras, rigid transforms, projection and triangulation.

Conventions used throughout the package:

- poses are world-to-camera: ``x_cam = R @ x_world + t``;
- camera axes follow the usual computer vision layout (x right, y down, z forward);
- pixel ``(j, i)`` covers ``[j, j + 1) x [i, i + 1)``, so the centre of the
  pixel in column ``j`` and row ``i`` is ``(j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

import dataclasses as dc
import math
from collections.abc import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, DegenerateGeometry, InsufficientData

MIN_DEPTH = 1e-9
MIN_TRIANGULATION_ANGLE_DEG = 0.1


def _as_vector(value, size: int, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=float).reshape(-1)
    if array.shape != (size,):
        raise ValueError(f"{name} must have {size} components (got {array.shape})")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must be finite (got {array})")
    return array


@dc.dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera with a single focal length and no distortion."""

    focal_px: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (isinstance(self.width, int) and isinstance(self.height, int)):
            raise TypeError("width and height must be integers")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive (got {self.width}x{self.height})")
        if not (math.isfinite(self.focal_px) and self.focal_px > 0):
            raise ValueError(f"focal_px must be > 0 (got {self.focal_px})")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside the "
                f"{self.width}x{self.height} image"
            )

    @classmethod
    def default_for(cls, width: int, height: int) -> CameraIntrinsics:
        """Initial guess used before any calibration: ``f = 1.2 * max(w, h)``, centred."""
        return cls(1.2 * max(width, height), width / 2, height / 2, width, height)

    @property
    def principal_point(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.focal_px, 0.0, self.cx], [0.0, self.focal_px, self.cy], [0, 0, 1.0]]
        )

    @property
    def half_diagonal(self) -> float:
        return 0.5 * math.hypot(self.width, self.height)

    def copy(self, **kwargs) -> CameraIntrinsics:
        return dc.replace(self, **kwargs)

    def as_dict(self) -> dict:
        return dc.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> CameraIntrinsics:
        return cls(
            float(data["focal_px"]),
            float(data["cx"]),
            float(data["cy"]),
            int(data["width"]),
            int(data["height"]),
        )

    def in_bounds(self, pixels: np.ndarray) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=float)
        return (
            (pixels[..., 0] >= 0)
            & (pixels[..., 0] <= self.width)
            & (pixels[..., 1] >= 0)
            & (pixels[..., 1] <= self.height)
        )

    def normalize(self, pixels: np.ndarray) -> np.ndarray:
        """Pixel coordinates to normalized image coordinates."""
        return (np.asarray(pixels, dtype=float) - self.principal_point) / self.focal_px

    def pixel_centres(self) -> np.ndarray:
        """``(height, width, 2)`` array of pixel centre coordinates."""
        cols, rows = np.meshgrid(
            np.arange(self.width) + 0.5, np.arange(self.height) + 0.5
        )
        return np.stack([cols, rows], axis=-1)


@dc.dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform.

    The rotation is stored as a unit quaternion ``(w, x, y, z)`` with ``w >= 0``.
    """

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        quat = _as_vector(self.quaternion, 4, "quaternion")
        norm = np.linalg.norm(quat)
        if norm < 1e-12:
            raise ValueError("quaternion must be non-zero")
        quat = quat / norm
        if quat[0] < 0:
            quat = -quat
        translation = _as_vector(self.translation, 3, "translation")
        quat.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, "quaternion", quat)
        object.__setattr__(self, "translation", translation)

    def __repr__(self) -> str:
        return f"Pose(quaternion={self.quaternion.tolist()}, translation={self.translation.tolist()})"

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.array([1.0, 0, 0, 0]), np.zeros(3))

    @classmethod
    def from_rotation(cls, rotation: Rotation, translation) -> Pose:
        x, y, z, w = rotation.as_quat()
        return cls(np.array([w, x, y, z]), translation)

    @classmethod
    def from_matrix(cls, R: np.ndarray, t) -> Pose:
        return cls.from_rotation(Rotation.from_matrix(np.asarray(R, dtype=float)), t)

    @classmethod
    def from_center(cls, R: np.ndarray, center) -> Pose:
        """Build a pose from a rotation and the camera centre in world coordinates."""
        R = np.asarray(R, dtype=float)
        return cls.from_matrix(R, -R @ np.asarray(center, dtype=float))

    @classmethod
    def look_at(cls, center, target, up=(0.0, 0.0, 1.0)) -> Pose:
        """Camera at ``center`` looking at ``target`` with image "down" opposite ``up``."""
        center = _as_vector(center, 3, "center")
        z_axis = _as_vector(target, 3, "target") - center
        z_axis /= np.linalg.norm(z_axis)
        up = _as_vector(up, 3, "up")
        y_axis = -up + np.dot(up, z_axis) * z_axis
        if np.linalg.norm(y_axis) < 1e-9:
            raise DegenerateGeometry("viewing direction is parallel to the up vector")
        y_axis /= np.linalg.norm(y_axis)
        x_axis = np.cross(y_axis, z_axis)
        return cls.from_center(np.stack([x_axis, y_axis, z_axis]), center)

    @property
    def rotation(self) -> Rotation:
        w, x, y, z = self.quaternion
        return Rotation.from_quat([x, y, z, w])

    @property
    def R(self) -> np.ndarray:
        return self.rotation.as_matrix()

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        return self.R[2]

    def matrix(self) -> np.ndarray:
        """The 3x4 matrix ``[R | t]``."""
        return np.hstack([self.R, self.translation[:, None]])

    def compose(self, other: Pose) -> Pose:
        """The transform applying ``other`` first, then ``self``."""
        return Pose.from_rotation(
            self.rotation * other.rotation,
            self.R @ other.translation + self.translation,
        )

    def inverse(self) -> Pose:
        return Pose.from_rotation(self.rotation.inv(), self.center)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """World points ``(..., 3)`` into the camera frame."""
        return np.asarray(points, dtype=float) @ self.R.T + self.translation

    def is_close(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.matrix(), other.matrix(), rtol=0, atol=atol)
        )

    def as_record(self) -> dict:
        return {
            "quaternion": self.quaternion.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_record(cls, record: dict) -> Pose:
        return cls(np.array(record["quaternion"]), np.array(record["translation"]))


@dc.dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = _as_vector(self.origin, 3, "origin")
        direction = _as_vector(self.direction, 3, "direction")
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            raise ValueError("ray direction must be non-zero")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction / norm)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dc.dataclass(frozen=True, eq=False)
class Normalization:
    """The similarity ``x_n = (x - center) / scale`` into field coordinates."""

    center: np.ndarray = dc.field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vector(self.center, 3, "center"))
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive (got {self.scale})")

    @classmethod
    def fit(cls, points: np.ndarray, radius: float = 0.8, quantile: float = 0.98) -> Normalization:
        """Place the bulk of ``points`` inside a sphere of ``radius``.

        The median is the centre and the ``quantile`` of the distances to it
        maps to ``radius``, so isolated outliers do not shrink the object.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(points) == 0:
            return cls()
        center = np.median(points, axis=0)
        extent = float(np.quantile(np.linalg.norm(points - center, axis=1), quantile))
        return cls(center, max(extent, 1e-9) / radius)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) * self.scale + self.center

    def apply_pose(self, pose: Pose) -> Pose:
        return Pose.from_center(pose.R, self.apply(pose.center))

    def invert_pose(self, pose: Pose) -> Pose:
        return Pose.from_center(pose.R, self.invert(pose.center))

    def as_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale}

    @classmethod
    def from_dict(cls, data: dict) -> Normalization:
        return cls(np.array(data["center"], dtype=float), float(data["scale"]))


def project(point, pose: Pose, K: CameraIntrinsics) -> np.ndarray:
    """Project a world point to pixel coordinates.

    :raises BehindCamera: when the camera-frame depth is ``<= 1e-9``
    """
    cam = pose.apply(_as_vector(point, 3, "point"))
    if cam[2] <= MIN_DEPTH:
        raise BehindCamera(f"point has depth {cam[2]:.3g} in the camera frame")
    return K.focal_px * cam[:2] / cam[2] + K.principal_point


def project_points(
    points: np.ndarray, pose: Pose, K: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns ``(pixels, depths)``.

    Pixels of points at non-positive depth are ``nan``.
    """
    cam = pose.apply(points)
    depth = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        pixels = K.focal_px * cam[..., :2] / depth[..., None] + K.principal_point
    pixels[depth <= MIN_DEPTH] = np.nan
    return pixels, depth


def unproject(pixel, pose: Pose, K: CameraIntrinsics) -> Ray:
    """The ray leaving the camera centre through ``pixel``."""
    pixel = _as_vector(pixel, 2, "pixel")
    if not K.in_bounds(pixel):
        raise ValueError(f"pixel {pixel.tolist()} outside the {K.width}x{K.height} image")
    direction_cam = np.append(K.normalize(pixel), 1.0)
    return Ray(pose.center, pose.R.T @ direction_cam)


def pixel_rays(
    pose: Pose, K: CameraIntrinsics, pixels: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions of the rays through ``pixels`` (default: all centres)."""
    if pixels is None:
        pixels = K.pixel_centres()
    pixels = np.asarray(pixels, dtype=float)
    direction_cam = np.concatenate(
        [K.normalize(pixels), np.ones(pixels.shape[:-1] + (1,))], axis=-1
    )
    directions = direction_cam @ pose.R
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.center, directions.shape).copy()
    return origins, directions


def backproject_depth(
    pixels: np.ndarray, depth: np.ndarray, pose: Pose, K: CameraIntrinsics
) -> np.ndarray:
    """World points at camera z-depth ``depth`` behind ``pixels``."""
    pixels = np.asarray(pixels, dtype=float)
    cam = np.concatenate(
        [K.normalize(pixels), np.ones(pixels.shape[:-1] + (1,))], axis=-1
    ) * np.asarray(depth, dtype=float)[..., None]
    return (cam - pose.translation) @ pose.R


def rotation_angle_deg(R: np.ndarray) -> float:
    """Angle of the rotation matrix ``R`` in degrees."""
    return float(np.degrees(Rotation.from_matrix(R).magnitude()))


def angle_between_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cos = np.sum(a * b, axis=-1) / (
        np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    )
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for ``(..., 3)`` vectors."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _reprojection_residuals(point, observations) -> np.ndarray:
    residuals = []
    for pose, K, pixel in observations:
        cam = pose.apply(point)
        if cam[2] <= MIN_DEPTH:
            return np.full(2 * len(observations), np.inf)
        residuals.append(K.focal_px * cam[:2] / cam[2] + K.principal_point - pixel)
    return np.concatenate(residuals)


def triangulate(
    observations: Sequence[tuple[Pose, CameraIntrinsics, np.ndarray]],
) -> np.ndarray:
    """Triangulate one point seen from several posed cameras.

    Linear DLT on normalized image coordinates, followed by a single
    Gauss-Newton step on the pixel reprojection error (kept only if it lowers
    the error).

    :raises InsufficientData: fewer than two observations
    :raises DegenerateGeometry: all viewing rays within 0.1 degrees of each other
    """
    if len(observations) < 2:
        raise InsufficientData(
            f"triangulation needs at least 2 observations (got {len(observations)})"
        )
    observations = [
        (pose, K, _as_vector(pixel, 2, "pixel")) for pose, K, pixel in observations
    ]
    directions = np.array(
        [pose.R.T @ np.append(K.normalize(pixel), 1.0) for pose, K, pixel in observations]
    )
    angles = angle_between_deg(directions[:, None], directions[None, :])
    if angles.max() < MIN_TRIANGULATION_ANGLE_DEG:
        raise DegenerateGeometry(
            f"largest ray angle {angles.max():.3g} deg is below "
            f"{MIN_TRIANGULATION_ANGLE_DEG} deg"
        )

    rows = []
    for pose, K, pixel in observations:
        x, y = K.normalize(pixel)
        P = pose.matrix()
        rows.append(x * P[2] - P[0])
        rows.append(y * P[2] - P[1])
    A = np.array(rows)
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    _, _, vt = np.linalg.svd(A)
    homogeneous = vt[-1]
    if abs(homogeneous[3]) < 1e-15:
        raise DegenerateGeometry("triangulated point is at infinity")
    point = homogeneous[:3] / homogeneous[3]

    residuals = _reprojection_residuals(point, observations)
    if not np.all(np.isfinite(residuals)):
        return point
    jacobian = []
    for pose, K, _ in observations:
        cam = pose.apply(point)
        x, y, z = cam
        d_proj = K.focal_px / z * np.array([[1.0, 0.0, -x / z], [0.0, 1.0, -y / z]])
        jacobian.append(d_proj @ pose.R)
    J = np.vstack(jacobian)
    step, *_ = np.linalg.lstsq(J, -residuals, rcond=None)
    refined = point + step
    refined_residuals = _reprojection_residuals(refined, observations)
    if np.sum(refined_residuals**2) < np.sum(residuals**2):
        return refined
    return point


def triangulate_pairs(
    pose_a: Pose, pose_b: Pose, xa: np.ndarray, xb: np.ndarray
) -> np.ndarray:
    """Linear triangulation of many points from two views.

    ``xa``/``xb`` are ``(N, 2)`` *normalized* image coordinates.
    """
    Pa, Pb = pose_a.matrix(), pose_b.matrix()
    A = np.stack(
        [
            xa[:, :1] * Pa[2] - Pa[0],
            xa[:, 1:2] * Pa[2] - Pa[1],
            xb[:, :1] * Pb[2] - Pb[0],
            xb[:, 1:2] * Pb[2] - Pb[1],
        ],
        axis=1,
    )
    _, _, vt = np.linalg.svd(A)
    homogeneous = vt[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return homogeneous[:, :3] / homogeneous[:, 3:]
