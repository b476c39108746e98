"""Volume rendering of signed distance fields inside the unit sphere.

Samples are stratified between the entry and exit of the unit sphere. The
opacity of the interval between samples ``i`` and ``i + 1`` is

    alpha_i = max(0, (Phi(sdf_i) - Phi(sdf_i+1)) / Phi(sdf_i))

with ``Phi`` the logistic function at the field's sharpness, and colours are
composited front to back over a black background.
"""

from __future__ import annotations

from collections.abc import Callable
from typing import TypedDict

import numpy as np
import torch

from ..geometry import CameraIntrinsics, Pose, pixel_rays
from ..photometric.params import PhotometricParams, forward_pipeline

EPS = 1e-6


class RayBundle(TypedDict):
    rgb: torch.Tensor
    """``(R, 3)`` composited colour"""
    opacity: torch.Tensor
    """``(R,)`` accumulated weight"""
    depth: torch.Tensor
    """``(R,)`` expected distance along the ray (``0`` where opacity is zero)"""
    weights: torch.Tensor
    """``(R, S - 1)`` compositing weights"""
    gradients: torch.Tensor
    """``(R, S, 3)`` signed distance gradients at the samples"""
    inside: torch.Tensor
    """``(R,)`` rays that intersect the unit sphere"""


def unit_sphere_bounds(
    origins: torch.Tensor, directions: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Entry and exit distances of unit-direction rays; ``hit`` flags intersections."""
    b = (origins * directions).sum(-1)
    c = (origins * origins).sum(-1) - 1.0
    disc = b * b - c
    root = disc.clamp(min=0).sqrt()
    near = (-b - root).clamp(min=0)
    far = -b + root
    hit = (disc > 0) & (far > near)
    return near, torch.where(hit, far, near + 1.0), hit


def render_rays(
    field,
    origins: torch.Tensor,
    directions: torch.Tensor,
    n_samples: int = 48,
    *,
    generator: torch.Generator | None = None,
    photometric: Callable[[torch.Tensor], torch.Tensor] | None = None,
) -> RayBundle:
    """Render ``(R, 3)`` rays through ``field``.

    ``generator`` enables stratified jitter (training), otherwise samples sit
    at bin centres. ``photometric`` maps composited radiance to observed values.
    """
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2 (got {n_samples})")
    dtype = origins.dtype
    n_rays = origins.shape[0]
    near, far, inside = unit_sphere_bounds(origins, directions)
    if generator is None:
        jitter = torch.full((n_rays, n_samples), 0.5, dtype=dtype)
    else:
        jitter = torch.rand(n_rays, n_samples, generator=generator, dtype=dtype)
    bins = (torch.arange(n_samples, dtype=dtype)[None] + jitter) / n_samples
    t = near[:, None] + (far - near)[:, None] * bins  # (R, S)
    points = origins[:, None, :] + t[..., None] * directions[:, None, :]

    flat = points.reshape(-1, 3)
    sdf, gradient, features = field.sdf_and_gradient(flat)
    sdf = sdf.reshape(n_rays, n_samples)
    gradients = gradient.reshape(n_rays, n_samples, 3)

    s = field.sharpness
    cdf = torch.sigmoid(s * sdf)
    alpha = ((cdf[:, :-1] - cdf[:, 1:]) / (cdf[:, :-1] + EPS)).clamp(0.0, 1.0)
    alpha = alpha * inside[:, None].to(dtype)
    transmittance = torch.cumprod(
        torch.cat([torch.ones_like(alpha[:, :1]), 1.0 - alpha + 1e-10], dim=1), dim=1
    )[:, :-1]
    weights = alpha * transmittance  # (R, S - 1)

    mid_points = 0.5 * (points[:, :-1] + points[:, 1:])
    mid_t = 0.5 * (t[:, :-1] + t[:, 1:])
    normals = torch.nn.functional.normalize(gradients[:, :-1], dim=-1)
    dirs = directions[:, None, :].expand(-1, n_samples - 1, -1)
    colors = field.radiance(
        mid_points.reshape(-1, 3),
        dirs.reshape(-1, 3),
        normals.reshape(-1, 3),
        features.reshape(n_rays, n_samples, -1)[:, :-1].reshape(n_rays * (n_samples - 1), -1),
    ).reshape(n_rays, n_samples - 1, 3)

    rgb = (weights[..., None] * colors).sum(dim=1)
    opacity = weights.sum(dim=1)
    depth = (weights * mid_t).sum(dim=1) / opacity.clamp(min=EPS)
    depth = torch.where(opacity > EPS, depth, torch.zeros_like(depth))
    if photometric is not None:
        rgb = photometric(rgb)
    return {
        "rgb": rgb.clamp(0.0, 1.0),
        "opacity": opacity,
        "depth": depth,
        "weights": weights,
        "gradients": gradients,
        "inside": inside,
    }


@torch.no_grad()
def render_image(
    field,
    pose: Pose,
    K: CameraIntrinsics,
    n_samples: int = 64,
    *,
    photometric: PhotometricParams | None = None,
    frame_index: int = 0,
    chunk: int = 1024,
) -> dict[str, np.ndarray]:
    """Render a whole frame (pose in field coordinates).

    :returns: ``image`` ``(H, W, 3)``, ``opacity`` and ``depth`` (camera z) maps
    """
    origins, directions = pixel_rays(pose, K)
    origins = torch.as_tensor(origins.reshape(-1, 3), dtype=torch.float32)
    directions = torch.as_tensor(directions.reshape(-1, 3), dtype=torch.float32)
    rgb, opacity, depth = [], [], []
    for start in range(0, origins.shape[0], chunk):
        bundle = render_rays(
            field, origins[start : start + chunk], directions[start : start + chunk], n_samples
        )
        rgb.append(bundle["rgb"])
        opacity.append(bundle["opacity"])
        depth.append(bundle["depth"])
    shape = (K.height, K.width)
    image = torch.cat(rgb).reshape(*shape, 3).numpy().astype(float)
    along_ray = torch.cat(depth).reshape(shape).numpy().astype(float)
    cosine = directions.reshape(*shape, 3).numpy() @ pose.optical_axis
    if photometric is not None:
        image = forward_pipeline(
            image, K.pixel_centres(), photometric.frame(frame_index), photometric.response, K
        )
    return {
        "image": image,
        "opacity": torch.cat(opacity).reshape(shape).numpy().astype(float),
        "depth": along_ray * cosine,
    }
