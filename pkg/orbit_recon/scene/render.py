"""Sphere-tracing renderer for analytic scenes."""

from __future__ import annotations

import dataclasses as dc
from collections.abc import Callable
from typing import Literal

import cv2
import numpy as np

from ..geometry import CameraIntrinsics, Pose, pixel_rays
from ..photometric.params import FrameParams, ResponseParams, forward_pipeline
from .primitives import SceneModel

BackgroundType = Literal["black", "earthlike"]

TRACE_STEPS = 64
TRACE_TOLERANCE = 1e-4
AMBIENT = 0.02
SHADOW_OFFSET = 1e-3


@dc.dataclass(frozen=True, eq=False)
class RenderedFrame:
    image: np.ndarray
    """``(H, W, 3)`` float values in ``[0, 1]``"""
    depth: np.ndarray
    """``(H, W)`` float32 camera z-depth, ``inf`` where the ray misses"""
    mask: np.ndarray
    """``(H, W)`` bool, ``True`` where the ray hits the scene"""


def unit_sphere_interval(
    origins: np.ndarray, directions: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entry/exit distances of rays through the unit sphere; ``(t_near, t_far, hits)``."""
    b = np.sum(origins * directions, axis=-1)
    c = np.sum(origins * origins, axis=-1) - 1.0
    disc = b * b - c
    hits = disc > 0
    root = np.sqrt(np.where(hits, disc, 0.0))
    t_near = np.maximum(-b - root, 0.0)
    t_far = -b + root
    return t_near, t_far, hits & (t_far > 0)


def sphere_trace(
    sdf: Callable[[np.ndarray], np.ndarray],
    origins: np.ndarray,
    directions: np.ndarray,
    max_steps: int = TRACE_STEPS,
    tolerance: float = TRACE_TOLERANCE,
) -> tuple[np.ndarray, np.ndarray]:
    """March ``(N, 3)`` rays through the unit sphere.

    :returns: ``(t, hit)``; ``t`` is the ray parameter of the hit (``inf`` on misses)
    """
    t_near, t_far, alive = unit_sphere_interval(origins, directions)
    t = t_near.copy()
    hit = np.zeros(len(origins), dtype=bool)
    for _ in range(max_steps):
        active = np.flatnonzero(alive & ~hit)
        if active.size == 0:
            break
        distance = sdf(origins[active] + t[active, None] * directions[active])
        converged = distance < tolerance
        hit[active[converged]] = True
        marching = active[~converged]
        t[marching] += distance[~converged]
        alive[marching] = t[marching] <= t_far[marching]
    return np.where(hit, t, np.inf), hit


def earthlike_background(
    height: int, width: int, seed: int, offset: tuple[int, int] = (0, 0)
) -> np.ndarray:
    """Blue-green land/sea pattern with a low-frequency gradient and sensor noise.

    The land/sea layout depends on ``seed`` only and is shifted by ``offset``
    (rows, columns) so consecutive frames see a scrolling planet.
    """
    rng = np.random.default_rng(seed)
    coarse = rng.random((max(height // 5, 2), max(width // 5, 2)))
    field = cv2.resize(coarse, (2 * width, 2 * height), interpolation=cv2.INTER_CUBIC)
    field = np.roll(field, shift=offset, axis=(0, 1))[:height, :width]
    land = (field > 0.5)[..., None]
    sea_colour = np.array([0.05, 0.16, 0.5])
    land_colour = np.array([0.3, 0.55, 0.2])
    image = np.where(land, land_colour, sea_colour)

    angle = rng.uniform(0, 2 * np.pi)
    rows, cols = np.mgrid[0:height, 0:width]
    ramp = (np.cos(angle) * cols / width + np.sin(angle) * rows / height) % 1.0
    image = image * (0.75 + 0.4 * ramp)[..., None]
    image = image + rng.normal(0.0, 0.015, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def shade(
    scene: SceneModel, points: np.ndarray, sun_direction: np.ndarray
) -> np.ndarray:
    """Lambertian radiance with hard shadows plus constant ambient."""
    normals = scene.normal(points)
    lambert = np.maximum(normals @ sun_direction, 0.0)
    lit = np.flatnonzero(lambert > 0)
    shadow = np.ones(len(points))
    if lit.size:
        origins = points[lit] + SHADOW_OFFSET * normals[lit]
        directions = np.broadcast_to(sun_direction, origins.shape)
        _, blocked = sphere_trace(scene.sdf, origins, directions)
        shadow[lit[blocked]] = 0.0
    return scene.albedo(points) * (lambert * shadow)[:, None] + AMBIENT


def render_frame(
    scene: SceneModel,
    pose: Pose,
    K: CameraIntrinsics,
    sun_direction,
    frame_params: FrameParams | None = None,
    response: ResponseParams | None = None,
    background: BackgroundType = "black",
    background_seed: int = 0,
    background_offset: tuple[int, int] = (0, 0),
) -> RenderedFrame:
    """Render image, depth and mask of ``scene`` seen from ``pose``.

    The photometric chain is applied to the whole image, so a black background
    stays exactly zero.
    """
    if np.linalg.norm(pose.center) <= 1.0:
        raise ValueError(
            "camera centre must lie outside the unit bounding sphere of the scene "
            f"(|c| = {np.linalg.norm(pose.center):.3f})"
        )
    sun = np.asarray(sun_direction, dtype=float)
    sun = sun / np.linalg.norm(sun)
    pixels = K.pixel_centres().reshape(-1, 2)
    origins, directions = pixel_rays(pose, K, pixels)
    t, hit = sphere_trace(scene.sdf, origins, directions)

    if background == "black":
        radiance = np.zeros((len(pixels), 3))
    elif background == "earthlike":
        radiance = earthlike_background(
            K.height, K.width, background_seed, background_offset
        ).reshape(-1, 3)
    else:
        raise ValueError(f"unknown background {background!r}")
    if np.any(hit):
        points = origins[hit] + t[hit, None] * directions[hit]
        radiance[hit] = shade(scene, points, sun)

    image = forward_pipeline(
        radiance,
        pixels,
        frame_params or FrameParams(),
        response or ResponseParams(),
        K,
    )
    depth = np.where(hit, t * (directions @ pose.optical_axis), np.inf)
    shape = (K.height, K.width)
    return RenderedFrame(
        image.reshape(shape + (3,)),
        depth.reshape(shape).astype(np.float32),
        hit.reshape(shape),
    )
