"""The configuration of the reconstruction pipeline.

Every stage reads one section of :class:`PipelineConfig`. Fields carry their
validator, a ``help`` text and, where a default mirrors a value used on real
footage, the ``provenance`` of that value; both end up as comments in
:func:`render_default_config`.
"""

from __future__ import annotations

import copy
import dataclasses as dc
import hashlib
import json
import re
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

import yaml

from ..errors import ConfigError
from .dc_validators import (
    deep_iterable,
    ge,
    gt,
    in_,
    in_range,
    instance_of,
    validate_fields,
    vector_of,
)

SCENE_PRESETS = ("sphere", "rocket-body", "station", "torus")


def _field(default: Any, validator, help: str, provenance: str | None = None, **kwargs):
    metadata = {"validator": validator, "help": help}
    if provenance:
        metadata["provenance"] = provenance
    if dc.is_dataclass(default):
        section = default
        return dc.field(default_factory=lambda: copy.deepcopy(section), metadata=metadata, **kwargs)
    if isinstance(default, (list, dict)):
        value = default
        return dc.field(default_factory=lambda: type(value)(value), metadata=metadata, **kwargs)
    return dc.field(default=default, metadata=metadata, **kwargs)


class _Section:
    """Helpers shared by all configuration sections."""

    def __post_init__(self):
        validate_fields(self)

    def copy(self, **kwargs: Any):
        """Return a new object replacing specified fields with new values.

        Note: initiating the copy will also validate the new fields.
        """
        return dc.replace(self, **kwargs)  # type: ignore[type-var]

    @classmethod
    def get_fields(cls) -> tuple[dc.Field, ...]:
        """Return all attribute fields in this class."""
        return dc.fields(cls)  # type: ignore[arg-type]

    def as_dict(self, dict_factory=dict) -> dict:
        """Return a dictionary of field name -> value."""
        return dc.asdict(self, dict_factory=dict_factory)  # type: ignore[call-overload]

    def as_triple(self) -> Iterable[tuple[str, Any, dc.Field]]:
        """Yield triples of (name, value, field)."""
        fields = {f.name: f for f in dc.fields(self)}  # type: ignore[arg-type]
        for name, value in dc.asdict(self).items():  # type: ignore[call-overload]
            yield name, value, fields[name]


@dc.dataclass
class DatasetConfig(_Section):
    """Where the frames come from, and how synthetic ones are made."""

    source: str = _field(
        "synthetic",
        instance_of(str),
        "'synthetic' or a directory of frames (real footage)",
    )
    preset: str = _field("rocket-body", in_(SCENE_PRESETS), "synthetic target preset")
    n_frames: int = _field(60, [instance_of(int), ge(2)], "frames along the fly-around")
    orbit_radius: float = _field(2.5, gt(1.0), "camera distance to the target centre")
    arc_deg: float = _field(
        360.0, [gt(0.0), in_range(0.0, 360.0)], "orbit arc in degrees (180 semicircle, 360 full circle)"
    )
    elevation_deg: float = _field(15.0, in_range(-80.0, 80.0), "elevation above the orbit plane")
    jitter_deg: float = _field(1.0, ge(0.0), "uniform pose jitter in degrees")
    jitter_radius: float = _field(0.01, ge(0.0), "relative orbit-radius jitter")
    width: int = _field(160, [instance_of(int), ge(16)], "image width in pixels")
    height: int = _field(120, [instance_of(int), ge(16)], "image height in pixels")
    sun_direction: list = _field([0.3, -0.4, 0.85], vector_of(3), "direction towards the sun")
    background: str = _field(
        "black",
        in_(("black", "earthlike", "alternating")),
        "background of the synthetic frames",
        "black sky in some frames and Earth in others",
    )
    background_period: int = _field(5, [instance_of(int), ge(1)], "frames per background block")
    exposure: str = _field(
        "none", in_(("none", "sinusoid", "ramp")), "ground-truth exposure schedule"
    )
    exposure_amplitude: float = _field(0.0, ge(0.0), "exposure schedule amplitude in EV")
    exposure_period: float = _field(0.0, ge(0.0), "sinusoid period in frames (0: whole sequence)")
    ccm_jitter: float = _field(0.0, ge(0.0), "std of the ground-truth colour matrix entries")
    vignette: list = _field([0.0, 0.0], vector_of(2), "ground-truth vignetting k1, k2")
    crf_gamma: float = _field(1.0, gt(0.0), "ground-truth response curve v ** (1 / gamma)")
    texture_contrast: float = _field(0.6, in_range(0.0, 1.0), "surface patch texture contrast")
    downsample: int = _field(
        1,
        [instance_of(int), ge(1)],
        "keep every n-th frame of the source sequence",
        "downsampling factors 20 and 2 on real footage",
    )


@dc.dataclass
class SegmentationConfig(_Section):
    mode: str = _field(
        "video",
        in_(("image", "video", "off")),
        "image: each frame alone, video: propagate the previous mask, off: no masking",
    )
    dark_level: float = _field(0.01, in_range(0.0, 1.0), "luminance always treated as sky")
    min_component_px: int = _field(25, [instance_of(int), ge(0)], "smallest accepted component")
    grabcut_iterations: int = _field(3, [instance_of(int), ge(1)], "GrabCut refinement iterations")
    propagation_margin: float = _field(
        0.15, ge(0.0), "dilation of the propagated mask, relative to its diameter"
    )
    clutter_fraction: float = _field(
        0.05, in_range(0.0, 1.0), "bright share outside the mask that triggers refinement"
    )


@dc.dataclass
class SfmConfig(_Section):
    correspondences: str = _field(
        "auto",
        in_(("auto", "synthetic", "detected")),
        "auto: synthetic when ground-truth depth exists, detected otherwise",
    )
    window: int = _field(
        30, [instance_of(int), ge(1)], "matching window in frames", "overlap parameter 30"
    )
    noise_px: float = _field(0.3, ge(0.0), "synthetic correspondence noise (pixels)")
    points_per_frame: int = _field(150, [instance_of(int), ge(1)], "synthetic surface samples per frame")
    max_corners: int = _field(300, [instance_of(int), ge(8)], "Harris corners per frame")
    ncc_min_score: float = _field(0.8, in_range(-1.0, 1.0), "minimum patch correlation")
    ransac_threshold_px: float = _field(2.0, gt(0.0), "RANSAC inlier threshold")
    ransac_iterations: int = _field(2000, [instance_of(int), ge(1)], "two-view RANSAC iterations")
    pnp_iterations: int = _field(1000, [instance_of(int), ge(1)], "PnP RANSAC iterations")
    prune_threshold_px: float = _field(4.0, gt(0.0), "observations above this error are rejected")
    min_seed_angle_deg: float = _field(3.0, ge(0.0), "median triangulation angle of the seed pair")
    min_track_angle_deg: float = _field(1.0, ge(0.0), "smallest ray angle of a new point")
    huber_px: float = _field(2.0, gt(0.0), "Huber scale of bundle adjustment")
    local_ba_frames: int = _field(5, [instance_of(int), ge(1)], "frames optimised by local BA")
    local_ba_iterations: int = _field(10, [instance_of(int), ge(1)], "local BA iterations")
    global_ba_every: int = _field(10, [instance_of(int), ge(1)], "registrations between global BAs")
    global_ba_iterations: int = _field(20, [instance_of(int), ge(1)], "global BA iterations")
    final_ba_iterations: int = _field(50, [instance_of(int), ge(1)], "final BA iterations")
    refine_intrinsics: bool = _field(True, instance_of(bool), "refine the focal length in the final BA")
    refine_principal_point: bool = _field(
        False,
        instance_of(bool),
        "also refine cx, cy in the final BA (poorly constrained on a single-axis orbit)",
    )


@dc.dataclass
class TrainConfig(_Section):
    iterations: int = _field(
        20000, [instance_of(int), ge(1)], "optimisation steps", "500000 at full scale"
    )
    rays_per_batch: int = _field(256, [instance_of(int), ge(1)], "rays per step")
    samples_per_ray: int = _field(48, [instance_of(int), ge(2)], "samples per ray")
    weight_rgb: float = _field(1.0, ge(0.0), "L1 colour loss weight")
    weight_eikonal: float = _field(0.1, ge(0.0), "eikonal loss weight")
    weight_mask: float = _field(0.1, ge(0.0), "mask loss weight")
    lr_tables: float = _field(1e-2, gt(0.0), "step size of the hash tables")
    lr_heads: float = _field(1e-3, gt(0.0), "step size of the MLP heads")
    lr_final_factor: float = _field(0.05, in_range(0.0, 1.0), "cosine decay floor")
    levels: int = _field(8, [instance_of(int), ge(1)], "hash-grid levels")
    min_resolution: int = _field(16, [instance_of(int), ge(2)], "coarsest grid resolution")
    max_resolution: int = _field(256, [instance_of(int), ge(2)], "finest grid resolution")
    log2_table_size: int = _field(15, [instance_of(int), ge(4)], "log2 entries per level")
    features_per_level: int = _field(2, [instance_of(int), ge(1)], "features per entry")
    hidden_width: int = _field(64, [instance_of(int), ge(1)], "width of the MLP heads")
    start_levels: int = _field(4, [instance_of(int), ge(0)], "active levels at step 0")
    grow_every: int = _field(0, [instance_of(int), ge(0)], "steps per new level (0: spread evenly)")
    init_sharpness: float = _field(20.0, gt(0.0), "initial logistic sharpness s")
    holdout_every: int = _field(10, [instance_of(int), ge(0)], "hold out every n-th frame (0: none)")
    deterministic: bool = _field(True, instance_of(bool), "single-threaded reproducible training")

    def __post_init__(self):
        super().__post_init__()
        if self.max_resolution <= self.min_resolution:
            raise ValueError(
                f"'max_resolution' must exceed 'min_resolution' (got {self.max_resolution})"
            )


@dc.dataclass
class PhaseSchedule(_Section):
    """Iterations of the two photometric fitting phases."""

    phase1_iters: int = _field(
        4000, [instance_of(int), ge(1)], "first phase iterations", "400k at full scale"
    )
    phase2_iters: int = _field(
        1000, [instance_of(int), ge(1)], "frozen-field iterations", "100k at full scale"
    )
    freeze_field_in_phase2: bool = _field(True, in_((True,)), "always true")


@dc.dataclass
class PhotometricConfig(_Section):
    enabled: bool = _field(True, instance_of(bool), "run the photometric stage")
    cotrain: bool = _field(
        False,
        instance_of(bool),
        "train the field during phase 1 (false keeps geometry untouched)",
    )
    schedule: PhaseSchedule = _field(PhaseSchedule(), instance_of(PhaseSchedule), "phase lengths")
    lr: float = _field(5e-3, gt(0.0), "step size of the photometric parameters")
    ccm_weight: float = _field(
        1e-2, ge(0.0), "pull of the colour matrices toward the identity"
    )
    rays_per_batch: int = _field(512, [instance_of(int), ge(1)], "rays per step")
    linear_threshold: float = _field(
        0.02, ge(0.0), "response curves scoring below this count as linear"
    )


@dc.dataclass
class MeshConfig(_Section):
    resolution: int = _field(
        128, [instance_of(int), ge(2)], "marching cubes grid resolution", "2048 at full scale"
    )
    bounds: list = _field([-1.0, 1.0], vector_of(2), "cube bounds in normalized coordinates")
    color_frame: int = _field(0, [instance_of(int), ge(0)], "frame whose photometric chain colours the mesh")


@dc.dataclass
class EvaluationConfig(_Section):
    overlay_frames: int = _field(3, [instance_of(int), ge(0)], "frames with reprojection overlays")
    overlay_opacities: list = _field(
        [0.0, 0.5, 1.0],
        deep_iterable(in_range(0.0, 1.0), instance_of(list)),
        "overlay opacities",
    )
    chamfer_samples: int = _field(20000, [instance_of(int), ge(100)], "samples per surface")
    psnr_frames: int = _field(0, [instance_of(int), ge(0)], "held-out frames rendered for PSNR (0: all)")


SECTIONS: dict[str, type[_Section]] = {
    "dataset": DatasetConfig,
    "segmentation": SegmentationConfig,
    "sfm": SfmConfig,
    "train": TrainConfig,
    "photometric": PhotometricConfig,
    "mesh": MeshConfig,
    "evaluation": EvaluationConfig,
}


@dc.dataclass
class PipelineConfig(_Section):
    """Configuration of a full pipeline run."""

    dataset: DatasetConfig = _field(DatasetConfig(), instance_of(DatasetConfig), "input frames")
    segmentation: SegmentationConfig = _field(
        SegmentationConfig(), instance_of(SegmentationConfig), "background removal"
    )
    sfm: SfmConfig = _field(SfmConfig(), instance_of(SfmConfig), "structure from motion")
    train: TrainConfig = _field(TrainConfig(), instance_of(TrainConfig), "neural surface")
    photometric: PhotometricConfig = _field(
        PhotometricConfig(), instance_of(PhotometricConfig), "photometric compensation"
    )
    mesh: MeshConfig = _field(MeshConfig(), instance_of(MeshConfig), "mesh extraction")
    evaluation: EvaluationConfig = _field(
        EvaluationConfig(), instance_of(EvaluationConfig), "evaluation"
    )
    output_dir: str = _field("orbit_out", instance_of(str), "root of all stage outputs")
    seed: int = _field(0, instance_of(int), "global seed threaded through every stage")
    suppress_warnings: list = _field(
        [],
        deep_iterable(instance_of(str), instance_of(list)),
        "warning codes to silence, e.g. orbit.empty_mask or orbit.*",
    )
    show_progress: bool = _field(False, instance_of(bool), "show progress bars")


_MESSAGE = re.compile(r"^'(?P<name>[^'\[]+)(?P<suffix>[^']*)' (?P<rest>.*)$", re.DOTALL)


def _build(cls: type, data: Any, path: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping (got {data!r})")
    names = {f.name: f for f in dc.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown option" if path else f"{key}: unknown option")
        field = names[key]
        nested = field.default_factory() if field.default_factory is not dc.MISSING else field.default
        if dc.is_dataclass(nested) and not isinstance(value, type(nested)):
            value = _build(type(nested), value, f"{path}.{key}" if path else key)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        match = _MESSAGE.match(str(exc))
        if match is None:
            raise ConfigError(f"{path or 'config'}: {exc}") from exc
        prefix = f"{path}.{match['name']}" if path else match["name"]
        raise ConfigError(f"{prefix}{match['suffix']}: {match['rest']}") from exc


def config_from_dict(data: Mapping[str, Any] | None) -> PipelineConfig:
    """Build a validated :class:`PipelineConfig` from plain data.

    :raises ConfigError: with the dotted path of the offending field
    """
    return _build(PipelineConfig, data or {}, "")


def load_config(path: str | Path | None = None, **overrides: Any) -> PipelineConfig:
    """Read a YAML configuration file (missing keys take their defaults)."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf8")
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    config = config_from_dict(data)
    return config.copy(**overrides) if overrides else config


def config_hash(config: PipelineConfig, sections: Iterable[str]) -> str:
    """sha256 of the named sections and the seed, in canonical JSON."""
    payload = {name: getattr(config, name).as_dict() for name in sorted(sections)}
    payload["seed"] = config.seed
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf8")).hexdigest()


def _comment(field: dc.Field) -> str:
    text = field.metadata.get("help", "")
    if "provenance" in field.metadata:
        text += f" [reference: {field.metadata['provenance']}]"
    return text


def _render_section(section: _Section, indent: str) -> list[str]:
    lines = []
    for name, value, field in section.as_triple():
        nested = getattr(section, name)
        if isinstance(nested, _Section):
            lines.append(f"{indent}{name}:  # {_comment(field)}")
            lines.extend(_render_section(nested, indent + "  "))
        else:
            lines.append(f"{indent}{name}: {json.dumps(value)}  # {_comment(field)}")
    return lines


def render_default_config() -> str:
    """The default configuration as commented YAML."""
    config = PipelineConfig()
    lines = ["# orbit-recon pipeline configuration (all defaults)"]
    for name, value, field in config.as_triple():
        nested = getattr(config, name)
        if isinstance(nested, _Section):
            lines.append("")
            lines.append(f"{name}:  # {_comment(field)}")
            lines.extend(_render_section(nested, "  "))
        else:
            lines.append(f"{name}: {json.dumps(value)}  # {_comment(field)}")
    return "\n".join(lines) + "\n"
