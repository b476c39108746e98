"""Analytic scenes, the sphere-tracing renderer and synthetic fly-around datasets."""

from .flyaround import (
    CorruptionSchedule,
    FlyaroundDataset,
    TrajectorySpec,
    background_schedule,
    generate_flyaround,
)
from .io import load_dataset, load_frames_directory, save_dataset
from .primitives import PRESETS, Primitive, SceneModel, analytic_sdf, get_preset
from .render import RenderedFrame, render_frame, sphere_trace

__all__ = (
    "PRESETS",
    "CorruptionSchedule",
    "FlyaroundDataset",
    "Primitive",
    "RenderedFrame",
    "SceneModel",
    "TrajectorySpec",
    "analytic_sdf",
    "background_schedule",
    "generate_flyaround",
    "get_preset",
    "load_dataset",
    "load_frames_directory",
    "render_frame",
    "save_dataset",
    "sphere_trace",
)
