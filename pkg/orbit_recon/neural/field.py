"""Signed distance fields that can be volume rendered.

:class:`SdfField` is learned: a hash-grid encoding feeds a geometry head
(signed distance plus a feature vector) and a radiance head (colour from
position, view direction, normal and geometry features). The signed distance
is a sphere of radius 0.5 plus a residual whose output layer starts at zero,
so an untrained field already is a valid distance function.

:class:`AnalyticField` wraps a closed-form distance with a constant colour and
shares the same query interface.
"""

from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np
import torch
from torch import nn

from .encoding import HashGridEncoding, encode

PRIOR_RADIUS = 0.5
GEOMETRY_FEATURES = 15


def _mlp(inputs: int, hidden: int, outputs: int, layers: int = 2) -> nn.Sequential:
    modules: list[nn.Module] = []
    width = inputs
    for _ in range(layers):
        modules += [nn.Linear(width, hidden), nn.Softplus(beta=100)]
        width = hidden
    modules.append(nn.Linear(width, outputs))
    return nn.Sequential(*modules)


class SdfField(nn.Module):
    def __init__(
        self,
        levels: int = 8,
        min_resolution: int = 16,
        max_resolution: int = 256,
        log2_table_size: int = 15,
        features_per_level: int = 2,
        hidden_width: int = 64,
        init_sharpness: float = 20.0,
        seed: int = 0,
    ):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.encoding = HashGridEncoding(
            levels, min_resolution, max_resolution, log2_table_size, features_per_level, generator
        )
        self.hidden_width = hidden_width
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.geometry = _mlp(3 + self.encoding.output_dim, hidden_width, 1 + GEOMETRY_FEATURES)
            self.radiance_head = _mlp(3 + 3 + 3 + GEOMETRY_FEATURES, hidden_width, 3)
        last = self.geometry[-1]
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)
        self.log_sharpness = nn.Parameter(torch.tensor(math.log(init_sharpness)))
        self.active_levels = self.encoding.levels
        self.clamped_queries = 0

    def config(self) -> dict:
        return {
            **self.encoding.config(),
            "hidden_width": self.hidden_width,
            "active_levels": self.active_levels,
        }

    @property
    def sharpness(self) -> torch.Tensor:
        return self.log_sharpness.exp()

    def table_parameters(self) -> list[nn.Parameter]:
        return [self.encoding.tables]

    def head_parameters(self) -> list[nn.Parameter]:
        return [*self.geometry.parameters(), *self.radiance_head.parameters(), self.log_sharpness]

    @property
    def gradient_step(self) -> float:
        """Finite-difference step: half a cell of the finest active level."""
        if self.active_levels == 0:
            return 0.5 / self.encoding.resolutions[0]
        return 0.5 / self.encoding.resolutions[self.active_levels - 1]

    def sdf_and_features(self, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        features, clamped = encode(self.encoding, points, self.active_levels)
        self.clamped_queries += int(clamped.sum())
        out = self.geometry(torch.cat([points, features], dim=-1))
        sdf = points.norm(dim=-1) - PRIOR_RADIUS + out[:, 0]
        return sdf, out[:, 1:]

    def sdf(self, points: torch.Tensor) -> torch.Tensor:
        return self.sdf_and_features(points)[0]

    def radiance(
        self,
        points: torch.Tensor,
        directions: torch.Tensor,
        normals: torch.Tensor,
        features: torch.Tensor,
    ) -> torch.Tensor:
        return torch.sigmoid(
            self.radiance_head(torch.cat([points, directions, normals, features], dim=-1))
        )

    def sdf_and_gradient(
        self, points: torch.Tensor, eps: float | None = None
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Signed distance, central-difference gradient and geometry features."""
        return _central_differences(self.sdf_and_features, points, eps or self.gradient_step)


def _central_differences(
    query: Callable[[torch.Tensor], tuple[torch.Tensor, torch.Tensor]],
    points: torch.Tensor,
    eps: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    n = points.shape[0]
    offsets = torch.eye(3, dtype=points.dtype, device=points.device) * eps
    shifted = torch.cat(
        [points, (points[:, None, :] + offsets).reshape(-1, 3), (points[:, None, :] - offsets).reshape(-1, 3)]
    )
    sdf, features = query(shifted)
    plus = sdf[n : 4 * n].reshape(n, 3)
    minus = sdf[4 * n :].reshape(n, 3)
    return sdf[:n], (plus - minus) / (2 * eps), features[:n]


class AnalyticField(nn.Module):
    """A closed-form distance function with constant radiance.

    ``color`` may also be a function from ``(N, 3)`` points to ``(N, 3)`` radiance.
    """

    def __init__(
        self,
        sdf_function: Callable[[torch.Tensor], torch.Tensor],
        color: float | tuple[float, float, float] | Callable[[torch.Tensor], torch.Tensor] = 0.7,
        sharpness: float = 200.0,
        gradient_step: float = 1e-3,
    ):
        super().__init__()
        self.sdf_function = sdf_function
        self.color_function = color if callable(color) else None
        constant = 0.5 if callable(color) else color
        self.register_buffer("color", torch.as_tensor(constant, dtype=torch.float32).expand(3).clone())
        self.register_buffer("log_sharpness", torch.tensor(math.log(sharpness)))
        self.gradient_step = gradient_step
        self.active_levels = 0

    @classmethod
    def sphere(cls, radius: float = 0.5, center=(0.0, 0.0, 0.0), **kwargs) -> AnalyticField:
        c = torch.tensor(center, dtype=torch.float32)
        return cls(lambda p: (p - c.to(p.dtype)).norm(dim=-1) - radius, **kwargs)

    @classmethod
    def from_numpy(cls, function: Callable[[np.ndarray], np.ndarray], **kwargs) -> AnalyticField:
        """Wrap a numpy distance function (for example ``SceneModel.sdf``)."""

        def sdf_function(points: torch.Tensor) -> torch.Tensor:
            values = function(points.detach().cpu().numpy().astype(float))
            return torch.as_tensor(np.asarray(values), dtype=points.dtype, device=points.device)

        return cls(sdf_function, **kwargs)

    @property
    def sharpness(self) -> torch.Tensor:
        return self.log_sharpness.exp()

    def sdf_and_features(self, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.sdf_function(points), points.new_zeros(points.shape[0], 0)

    def sdf(self, points: torch.Tensor) -> torch.Tensor:
        return self.sdf_function(points)

    def radiance(self, points, directions, normals, features) -> torch.Tensor:
        if self.color_function is not None:
            return self.color_function(points).to(points.dtype)
        return self.color.to(points.dtype).expand(points.shape[0], 3)

    def sdf_and_gradient(self, points: torch.Tensor, eps: float | None = None):
        return _central_differences(self.sdf_and_features, points, eps or self.gradient_step)


Field = SdfField | AnalyticField
