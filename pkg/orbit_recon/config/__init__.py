"""Pipeline configuration."""

from .main import (
    DatasetConfig,
    EvaluationConfig,
    MeshConfig,
    PhaseSchedule,
    PhotometricConfig,
    PipelineConfig,
    SegmentationConfig,
    SfmConfig,
    TrainConfig,
    config_from_dict,
    config_hash,
    load_config,
    render_default_config,
)

__all__ = (
    "DatasetConfig",
    "EvaluationConfig",
    "MeshConfig",
    "PhaseSchedule",
    "PhotometricConfig",
    "PipelineConfig",
    "SegmentationConfig",
    "SfmConfig",
    "TrainConfig",
    "config_from_dict",
    "config_hash",
    "load_config",
    "render_default_config",
)
