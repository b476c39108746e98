"""Multi-resolution hash-grid encoding of points in ``[-1, 1]^3``.

Level ``l`` is a lattice with ``N_l`` cells per axis, ``N_l`` growing
geometrically from ``min_resolution`` to ``max_resolution``. Its vertices are
stored densely while they fit in the table and spatially hashed otherwise.
A point is encoded by trilinear interpolation of the 8 vertices of its cell
on every level; levels at or above ``active_levels`` contribute zeros.
"""

from __future__ import annotations

import math

import torch
from torch import nn

PRIMES = (73856093, 19349663, 83492791)
INIT_RANGE = 1e-4

# corner offsets of a cell, x varying slowest
_CORNERS = torch.tensor(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=torch.long
)


def level_resolutions(levels: int, min_resolution: int, max_resolution: int) -> list[int]:
    """Per-level cell counts, strictly increasing."""
    if levels == 1:
        return [min_resolution]
    growth = math.exp((math.log(max_resolution) - math.log(min_resolution)) / (levels - 1))
    resolutions = [int(math.floor(min_resolution * growth**level + 1e-9)) for level in range(levels)]
    if any(b <= a for a, b in zip(resolutions, resolutions[1:])):
        raise ValueError(f"level resolutions are not strictly increasing: {resolutions}")
    return resolutions


class HashGridEncoding(nn.Module):
    """Learnable feature tables of shape ``(levels, table_size, features)``."""

    def __init__(
        self,
        levels: int = 8,
        min_resolution: int = 16,
        max_resolution: int = 256,
        log2_table_size: int = 15,
        features_per_level: int = 2,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        self.levels = levels
        self.min_resolution = min_resolution
        self.max_resolution = max_resolution
        self.log2_table_size = log2_table_size
        self.features_per_level = features_per_level
        self.table_size = 2**log2_table_size
        self.resolutions = level_resolutions(levels, min_resolution, max_resolution)
        self.dense = [(n + 1) ** 3 <= self.table_size for n in self.resolutions]
        tables = torch.rand(levels, self.table_size, features_per_level, generator=generator)
        self.tables = nn.Parameter((2 * tables - 1) * INIT_RANGE)

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level

    def config(self) -> dict:
        return {
            "levels": self.levels,
            "min_resolution": self.min_resolution,
            "max_resolution": self.max_resolution,
            "log2_table_size": self.log2_table_size,
            "features_per_level": self.features_per_level,
        }

    def vertex_index(self, level: int, vertices: torch.Tensor) -> torch.Tensor:
        """Table rows of integer lattice ``vertices`` ``(..., 3)`` on ``level``."""
        if self.dense[level]:
            side = self.resolutions[level] + 1
            return vertices[..., 0] + side * (vertices[..., 1] + side * vertices[..., 2])
        hashed = vertices[..., 0] * PRIMES[0]
        hashed = torch.bitwise_xor(hashed, vertices[..., 1] * PRIMES[1])
        hashed = torch.bitwise_xor(hashed, vertices[..., 2] * PRIMES[2])
        return torch.remainder(hashed, self.table_size)

    def forward(self, points: torch.Tensor, active_levels: int | None = None) -> torch.Tensor:
        features, _ = encode(self, points, active_levels)
        return features


def _cell(unit: torch.Tensor, resolution: int) -> tuple[torch.Tensor, torch.Tensor]:
    scaled = unit * resolution
    base = torch.clamp(torch.floor(scaled).long(), 0, resolution - 1)
    return base, scaled - base


def _weights(frac: torch.Tensor) -> torch.Tensor:
    corners = _CORNERS.to(frac.device).bool()
    return torch.where(corners[None], frac[:, None, :], 1.0 - frac[:, None, :]).prod(-1)


def encode(
    encoding: HashGridEncoding,
    points: torch.Tensor,
    active_levels: int | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Encode ``(N, 3)`` points.

    :returns: ``(N, levels * features)`` features and a boolean flag per
        point that was outside ``[-1, 1]^3`` and clamped onto it
    """
    active = encoding.levels if active_levels is None else int(active_levels)
    if not 0 <= active <= encoding.levels:
        raise ValueError(f"active_levels must be in [0, {encoding.levels}] (got {active})")
    points = points.to(encoding.tables.dtype)
    clamped = (points.abs() > 1).any(dim=-1)
    unit = (points.clamp(-1.0, 1.0) + 1.0) / 2.0
    corners = _CORNERS.to(points.device)
    outputs = []
    for level, resolution in enumerate(encoding.resolutions):
        if level >= active:
            outputs.append(points.new_zeros(points.shape[0], encoding.features_per_level))
            continue
        base, frac = _cell(unit, resolution)
        rows = encoding.vertex_index(level, base[:, None, :] + corners[None])
        values = encoding.tables[level][rows]  # (N, 8, F)
        outputs.append((_weights(frac)[..., None] * values).sum(dim=1))
    return torch.cat(outputs, dim=-1), clamped


def interpolation_weights(encoding: HashGridEncoding, points: torch.Tensor, level: int) -> torch.Tensor:
    """The 8 trilinear weights of ``points`` on ``level`` (they sum to one)."""
    unit = (points.clamp(-1.0, 1.0) + 1.0) / 2.0
    _, frac = _cell(unit, encoding.resolutions[level])
    return _weights(frac)
