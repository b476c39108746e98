"""Analytic scenes assembled from signed-distance primitives."""

from __future__ import annotations

import dataclasses as dc
from collections.abc import Callable, Sequence
from typing import Literal

import numpy as np
from scipy.spatial.transform import Rotation

ShapeType = Literal["sphere", "cylinder", "box", "torus"]

#: number of size parameters per shape
SHAPE_SIZES: dict[str, int] = {"sphere": 1, "cylinder": 2, "box": 3, "torus": 2}


def _sphere(p: np.ndarray, size: tuple[float, ...]) -> np.ndarray:
    return np.linalg.norm(p, axis=-1) - size[0]


def _cylinder(p: np.ndarray, size: tuple[float, ...]) -> np.ndarray:
    # capped cylinder along the local z axis: (radius, half height)
    radius, half_height = size
    d = np.stack(
        [np.linalg.norm(p[..., :2], axis=-1) - radius, np.abs(p[..., 2]) - half_height],
        axis=-1,
    )
    inside = np.minimum(np.max(d, axis=-1), 0.0)
    return inside + np.linalg.norm(np.maximum(d, 0.0), axis=-1)


def _box(p: np.ndarray, size: tuple[float, ...]) -> np.ndarray:
    q = np.abs(p) - np.asarray(size)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return inside + np.linalg.norm(np.maximum(q, 0.0), axis=-1)


def _torus(p: np.ndarray, size: tuple[float, ...]) -> np.ndarray:
    # torus in the local xy plane: (ring radius, tube radius)
    ring, tube = size
    q = np.stack([np.linalg.norm(p[..., :2], axis=-1) - ring, p[..., 2]], axis=-1)
    return np.linalg.norm(q, axis=-1) - tube


_SDF: dict[str, Callable[[np.ndarray, tuple[float, ...]], np.ndarray]] = {
    "sphere": _sphere,
    "cylinder": _cylinder,
    "box": _box,
    "torus": _torus,
}


def _cell_noise(cells: np.ndarray) -> np.ndarray:
    """Deterministic value in [0, 1) per integer lattice cell."""
    cells = cells.astype(np.int64)
    h = (
        cells[..., 0] * np.int64(73856093)
        ^ cells[..., 1] * np.int64(19349663)
        ^ cells[..., 2] * np.int64(83492791)
    )
    h = (h ^ (h >> 13)) * np.int64(1274126177)
    return ((h ^ (h >> 16)) & 0xFFFF) / 65536.0


@dc.dataclass(frozen=True)
class Primitive:
    """A solid primitive with a rigid placement, an albedo and a patch texture.

    The texture modulates the albedo per cell of a ``texture_scale`` lattice in
    object coordinates by a factor in ``[1 - texture_contrast, 1]``.
    """

    shape: ShapeType
    size: tuple[float, ...]
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    """object-to-world quaternion (w, x, y, z)"""
    albedo: tuple[float, float, float] = (0.8, 0.8, 0.8)
    texture_contrast: float = 0.0
    texture_scale: float = 8.0

    def __post_init__(self):
        if self.shape not in _SDF:
            raise ValueError(f"unknown primitive shape {self.shape!r}")
        if len(self.size) != SHAPE_SIZES[self.shape] or min(self.size) <= 0:
            raise ValueError(
                f"{self.shape} needs {SHAPE_SIZES[self.shape]} positive size values "
                f"(got {self.size})"
            )
        if not 0 <= self.texture_contrast <= 1:
            raise ValueError("texture_contrast must be in [0, 1]")

    @property
    def _rotation(self) -> Rotation:
        w, x, y, z = self.rotation
        return Rotation.from_quat([x, y, z, w])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        offset = np.asarray(points, dtype=float) - np.asarray(self.center)
        return offset @ self._rotation.as_matrix()

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return _SDF[self.shape](self.to_local(points), self.size)

    def albedo_at(self, points: np.ndarray) -> np.ndarray:
        base = np.broadcast_to(np.asarray(self.albedo), np.shape(points)).astype(float)
        if self.texture_contrast == 0:
            return base.copy()
        cells = np.floor(self.to_local(points) * self.texture_scale)
        factor = 1.0 - self.texture_contrast * _cell_noise(cells)
        return base * factor[..., None]

    def bounding_radius(self) -> float:
        """Radius of a ball around the world origin containing the primitive."""
        extent = {
            "sphere": lambda s: s[0],
            "cylinder": lambda s: float(np.hypot(s[0], s[1])),
            "box": lambda s: float(np.linalg.norm(s)),
            "torus": lambda s: s[0] + s[1],
        }[self.shape](self.size)
        return float(np.linalg.norm(self.center)) + extent

    def as_dict(self) -> dict:
        return dc.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> Primitive:
        return cls(
            data["shape"],
            tuple(data["size"]),
            tuple(data["center"]),
            tuple(data["rotation"]),
            tuple(data["albedo"]),
            float(data.get("texture_contrast", 0.0)),
            float(data.get("texture_scale", 8.0)),
        )


@dc.dataclass(frozen=True)
class SceneModel:
    """Union of primitives; the signed distance is the minimum over members."""

    primitives: tuple[Primitive, ...]
    name: str = "custom"

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("a scene needs at least one primitive")
        if self.bounding_radius() > 1.0 + 1e-9:
            raise ValueError(
                f"scene {self.name!r} does not fit in the unit bounding sphere "
                f"(radius {self.bounding_radius():.3f})"
            )

    def bounding_radius(self) -> float:
        return max(p.bounding_radius() for p in self.primitives)

    def member_sdf(self, points: np.ndarray) -> np.ndarray:
        """``(..., n_primitives)`` signed distances to each member."""
        return np.stack([p.sdf(points) for p in self.primitives], axis=-1)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return np.min(self.member_sdf(points), axis=-1)

    def gradient(self, points: np.ndarray, eps: float = 1e-6) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        grad = np.empty(points.shape)
        for axis in range(3):
            offset = np.zeros(3)
            offset[axis] = eps
            grad[..., axis] = (self.sdf(points + offset) - self.sdf(points - offset)) / (
                2 * eps
            )
        return grad

    def normal(self, points: np.ndarray, eps: float = 1e-6) -> np.ndarray:
        grad = self.gradient(points, eps)
        return grad / np.maximum(np.linalg.norm(grad, axis=-1, keepdims=True), 1e-12)

    def albedo(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        nearest = np.argmin(self.member_sdf(points), axis=-1)
        out = np.empty(points.shape)
        for index, primitive in enumerate(self.primitives):
            select = nearest == index
            if np.any(select):
                out[select] = primitive.albedo_at(points[select])
        return out

    def sample_surface(self, n_samples: int, seed: int = 0, iterations: int = 8):
        """Points on the zero level set, obtained by projecting random points
        of the unit ball along the gradient.
        """
        rng = np.random.default_rng(seed)
        collected: list[np.ndarray] = []
        count = 0
        while count < n_samples:
            candidates = rng.normal(size=(2 * n_samples, 3))
            radii = rng.random(2 * n_samples) ** (1 / 3)
            candidates *= (radii / np.linalg.norm(candidates, axis=1))[:, None]
            for _ in range(iterations):
                candidates = candidates - self.sdf(candidates)[:, None] * self.normal(
                    candidates
                )
            keep = np.abs(self.sdf(candidates)) < 1e-6
            collected.append(candidates[keep])
            count += int(keep.sum())
        return np.concatenate(collected)[:n_samples]

    def as_dict(self) -> dict:
        return {"name": self.name, "primitives": [p.as_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, data: dict) -> SceneModel:
        return cls(
            tuple(Primitive.from_dict(p) for p in data["primitives"]),
            data.get("name", "custom"),
        )


def analytic_sdf(scene: SceneModel, point: Sequence[float] | np.ndarray):
    """Signed distance from ``point`` (or an array of points) to ``scene``."""
    value = scene.sdf(np.asarray(point, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def _quat_about(axis: str, degrees: float) -> tuple[float, float, float, float]:
    x, y, z, w = Rotation.from_euler(axis, degrees, degrees=True).as_quat()
    return (w, x, y, z)


def sphere_preset(radius: float = 0.5, texture_contrast: float = 0.6) -> SceneModel:
    return SceneModel(
        (
            Primitive(
                "sphere",
                (radius,),
                albedo=(0.8, 0.8, 0.78),
                texture_contrast=texture_contrast,
            ),
        ),
        name="sphere",
    )


def rocket_body_preset(texture_contrast: float = 0.6) -> SceneModel:
    """Spent upper stage: a long capped cylinder with a smaller nozzle."""
    tilt = _quat_about("y", 90.0)
    return SceneModel(
        (
            Primitive(
                "cylinder",
                (0.25, 0.55),
                rotation=tilt,
                albedo=(0.85, 0.8, 0.7),
                texture_contrast=texture_contrast,
            ),
            Primitive(
                "cylinder",
                (0.15, 0.12),
                center=(-0.65, 0.0, 0.0),
                rotation=tilt,
                albedo=(0.55, 0.5, 0.45),
                texture_contrast=texture_contrast,
            ),
        ),
        name="rocket-body",
    )


def station_preset(texture_contrast: float = 0.6) -> SceneModel:
    """A box core with two thin solar panels."""
    panel = dict(size=(0.3, 0.12, 0.01), albedo=(0.35, 0.4, 0.7))
    return SceneModel(
        (
            Primitive(
                "box",
                (0.2, 0.2, 0.35),
                albedo=(0.85, 0.85, 0.85),
                texture_contrast=texture_contrast,
            ),
            Primitive(
                "box",
                center=(0.55, 0.0, 0.0),
                texture_contrast=texture_contrast,
                **panel,
            ),
            Primitive(
                "box",
                center=(-0.55, 0.0, 0.0),
                texture_contrast=texture_contrast,
                **panel,
            ),
        ),
        name="station",
    )


def torus_preset(texture_contrast: float = 0.6) -> SceneModel:
    return SceneModel(
        (
            Primitive(
                "torus",
                (0.4, 0.15),
                albedo=(0.8, 0.75, 0.6),
                texture_contrast=texture_contrast,
            ),
        ),
        name="torus",
    )


PRESETS: dict[str, Callable[..., SceneModel]] = {
    "sphere": sphere_preset,
    "rocket-body": rocket_body_preset,
    "station": station_preset,
    "torus": torus_preset,
}


def get_preset(name: str, **kwargs) -> SceneModel:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown scene preset {name!r}, expected one of {sorted(PRESETS)}") from None
    return factory(**kwargs)
