"""Exceptions raised across the reconstruction pipeline."""

from __future__ import annotations


class OrbitReconError(Exception):
    """Base class of all package errors."""


class BehindCamera(OrbitReconError):
    """A point projects with non-positive depth."""


class DegenerateGeometry(OrbitReconError):
    """The observation geometry does not constrain the estimate (e.g. zero baseline)."""


class InsufficientData(OrbitReconError):
    """Too few correspondences or inliers for a robust estimate."""


class SeedFailure(OrbitReconError):
    """No frame pair produced a valid two-view initialization."""


class TrainingDiverged(OrbitReconError):
    """A loss term became non-finite during optimization."""

    def __init__(self, iteration: int, term: str, value: float) -> None:
        self.iteration = iteration
        self.term = term
        self.value = value
        super().__init__(
            f"non-finite loss term {term!r} ({value}) at iteration {iteration}"
        )


class ConfigError(OrbitReconError):
    """Invalid configuration; the message starts with the dotted field path."""


class MissingDependency(OrbitReconError):
    """A stage was requested before the stage producing its inputs."""

    def __init__(self, stage: str, requires: str) -> None:
        self.stage = stage
        self.requires = requires
        super().__init__(
            f"stage {stage!r} needs the outputs of {requires!r}; "
            f"run `orbit-recon stage {requires}` first"
        )


class StageFailure(OrbitReconError):
    """A pipeline stage raised; wraps the original error."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
