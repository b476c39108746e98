"""Synthetic fly-around sequences with full ground truth."""

from __future__ import annotations

import dataclasses as dc
import logging
from collections.abc import Sequence

import numpy as np
from tqdm import tqdm

from ..geometry import CameraIntrinsics, Pose
from ..photometric.params import (
    PhotometricParams,
    ResponseParams,
    exposure_schedule,
    gamma_increments,
)
from .primitives import SceneModel
from .render import BackgroundType, render_frame

LOGGER = logging.getLogger(__name__)


@dc.dataclass(frozen=True)
class TrajectorySpec:
    """Circular arc of camera positions around the scene centre."""

    n_frames: int
    radius: float = 2.5
    arc: float = 360.0
    """degrees; 360 is a full circle, 180 a semicircle"""
    elevation: float = 15.0
    """degrees above the orbit plane"""
    jitter_seed: int = 0
    jitter_deg: float = 1.0
    jitter_radius: float = 0.01
    """relative radius jitter"""
    start_azimuth: float = 0.0

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError(f"n_frames must be >= 2 (got {self.n_frames})")
        if self.radius <= 1.0:
            raise ValueError(
                f"radius must exceed the unit bounding sphere (got {self.radius})"
            )
        if not 0 < self.arc <= 360:
            raise ValueError(f"arc must be in (0, 360] degrees (got {self.arc})")
        if self.jitter_deg < 0 or not 0 <= self.jitter_radius < 1:
            raise ValueError("jitter must be non-negative")

    def azimuths(self) -> np.ndarray:
        """Nominal azimuths in degrees (without jitter)."""
        index = np.arange(self.n_frames)
        if self.arc >= 360:
            step = self.arc / self.n_frames
        else:
            step = self.arc / (self.n_frames - 1)
        return self.start_azimuth + step * index

    def poses(self) -> list[Pose]:
        rng = np.random.default_rng(self.jitter_seed)
        noise = rng.uniform(-1.0, 1.0, size=(self.n_frames, 3))
        azimuth = np.radians(self.azimuths() + self.jitter_deg * noise[:, 0])
        elevation = np.radians(self.elevation + self.jitter_deg * noise[:, 1])
        radius = self.radius * (1.0 + self.jitter_radius * noise[:, 2])
        centres = radius[:, None] * np.stack(
            [
                np.cos(elevation) * np.cos(azimuth),
                np.cos(elevation) * np.sin(azimuth),
                np.sin(elevation),
            ],
            axis=1,
        )
        return [Pose.look_at(c, np.zeros(3)) for c in centres]


@dc.dataclass(frozen=True)
class CorruptionSchedule:
    """Ground-truth photometric corruption applied by the generator."""

    exposure: str = "none"
    """``none``, ``sinusoid`` or ``ramp``"""
    exposure_amplitude: float = 0.0
    exposure_period: float = 0.0
    ccm_jitter: float = 0.0
    """standard deviation of the off-identity colour matrix entries"""
    vignette: tuple[float, float] = (0.0, 0.0)
    crf_gamma: float = 1.0
    seed: int = 0

    def build(self, n_frames: int) -> PhotometricParams:
        rng = np.random.default_rng(self.seed)
        ev = exposure_schedule(
            self.exposure, n_frames, self.exposure_amplitude, self.exposure_period
        )
        ccm = np.tile(np.eye(3), (n_frames, 1, 1))
        if self.ccm_jitter > 0:
            ccm = ccm + rng.normal(0.0, self.ccm_jitter, size=ccm.shape)
            ccm += (1.0 - ccm.sum(-1, keepdims=True)) / 3.0  # grey stays grey
            ccm[0] = np.eye(3)
        vignette = np.tile(np.asarray(self.vignette, dtype=float), (3, 1))
        if self.crf_gamma == 1.0:
            response = ResponseParams(vignette)
        else:
            response = ResponseParams(
                vignette, np.tile(gamma_increments(self.crf_gamma), (3, 1))
            )
        return PhotometricParams(ev, ccm, response)


def background_schedule(kind: str, n_frames: int, period: int = 5) -> list[BackgroundType]:
    """Per-frame backgrounds.

    ``alternating`` switches between black and earthlike every ``period``
    frames, starting with black.
    """
    if kind in ("black", "earthlike"):
        return [kind] * n_frames  # type: ignore[list-item]
    if kind == "alternating":
        return [
            "black" if (index // period) % 2 == 0 else "earthlike"
            for index in range(n_frames)
        ]
    raise ValueError(f"unknown background schedule {kind!r}")


@dc.dataclass(eq=False)
class FlyaroundDataset:
    """A posed image sequence, with ground truth when it is synthetic.

    Frames are stored as ``uint8`` RGB, exactly as written to disk.
    """

    frames: np.ndarray
    intrinsics: CameraIntrinsics
    frame_ids: list[int]
    gt_poses: list[Pose] | None = None
    gt_masks: np.ndarray | None = None
    gt_depth: np.ndarray | None = None
    corruption: PhotometricParams | None = None
    backgrounds: list[str] | None = None
    scene: SceneModel | None = None
    sun_direction: np.ndarray | None = None

    def __post_init__(self):
        n_frames = len(self.frames)
        for name in ("frame_ids", "gt_poses", "gt_masks", "gt_depth", "corruption", "backgrounds"):
            value = getattr(self, name)
            if value is not None and len(value) != n_frames:
                raise ValueError(
                    f"{name} has {len(value)} entries but there are {n_frames} frames"
                )
        if self.frames.ndim != 4 or self.frames.shape[1:3] != (
            self.intrinsics.height,
            self.intrinsics.width,
        ):
            raise ValueError(
                f"frames of shape {self.frames.shape} do not match the "
                f"{self.intrinsics.width}x{self.intrinsics.height} camera"
            )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def has_ground_truth(self) -> bool:
        return self.gt_poses is not None

    def frame_float(self, index: int) -> np.ndarray:
        return self.frames[index].astype(np.float64) / 255.0

    def subset(self, indices: Sequence[int]) -> FlyaroundDataset:
        """The dataset restricted to positions ``indices`` (kept in order)."""
        indices = list(indices)

        def pick(value):
            if value is None:
                return None
            if isinstance(value, PhotometricParams):
                return value.subset(indices)
            if isinstance(value, np.ndarray):
                return value[indices]
            return [value[i] for i in indices]

        return dc.replace(
            self,
            frames=self.frames[indices],
            frame_ids=[self.frame_ids[i] for i in indices],
            gt_poses=pick(self.gt_poses),
            gt_masks=pick(self.gt_masks),
            gt_depth=pick(self.gt_depth),
            corruption=pick(self.corruption),
            backgrounds=pick(self.backgrounds),
        )


def generate_flyaround(
    scene: SceneModel,
    spec: TrajectorySpec,
    intrinsics: CameraIntrinsics,
    corruption: CorruptionSchedule | PhotometricParams | None = None,
    backgrounds: str | Sequence[str] = "black",
    *,
    sun_direction=(0.3, -0.4, 0.85),
    background_seed: int = 0,
    background_period: int = 5,
    show_progress: bool = False,
) -> FlyaroundDataset:
    """Render a fly-around of ``scene`` along ``spec``."""
    if spec.radius <= scene.bounding_radius():
        raise ValueError(
            f"orbit radius {spec.radius} is inside the scene bounding radius "
            f"{scene.bounding_radius():.3f}"
        )
    n_frames = spec.n_frames
    if corruption is None:
        params = PhotometricParams.identity(n_frames)
    elif isinstance(corruption, CorruptionSchedule):
        params = corruption.build(n_frames)
    else:
        params = corruption
    if len(params) != n_frames:
        raise ValueError(f"corruption covers {len(params)} frames, expected {n_frames}")
    if isinstance(backgrounds, str):
        backgrounds = background_schedule(backgrounds, n_frames, background_period)
    backgrounds = list(backgrounds)

    poses = spec.poses()
    sun = np.asarray(sun_direction, dtype=float)
    sun = sun / np.linalg.norm(sun)
    frames = np.empty((n_frames, intrinsics.height, intrinsics.width, 3), np.uint8)
    masks = np.empty((n_frames, intrinsics.height, intrinsics.width), bool)
    depth = np.empty((n_frames, intrinsics.height, intrinsics.width), np.float32)
    LOGGER.info(
        "rendering %d frames of %r at %dx%d",
        n_frames,
        scene.name,
        intrinsics.width,
        intrinsics.height,
    )
    for index in tqdm(range(n_frames), desc="render", disable=not show_progress):
        rendered = render_frame(
            scene,
            poses[index],
            intrinsics,
            sun,
            params.frame(index),
            params.response,
            background=backgrounds[index],
            background_seed=background_seed,
            background_offset=(2 * index, 3 * index),
        )
        frames[index] = np.round(rendered.image * 255).astype(np.uint8)
        masks[index] = rendered.mask
        depth[index] = rendered.depth
    return FlyaroundDataset(
        frames,
        intrinsics,
        list(range(n_frames)),
        gt_poses=poses,
        gt_masks=masks,
        gt_depth=depth,
        corruption=params,
        backgrounds=backgrounds,
        scene=scene,
        sun_direction=sun,
    )
