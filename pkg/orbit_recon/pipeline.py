"""Stage-by-stage execution of the reconstruction pipeline.

Every stage writes under ``<output_dir>/<stage>/`` and records a manifest
entry in ``<output_dir>/manifest.json``: the hash of the configuration
sections it reads and the sha256 of every input and output file. A stage
whose entry still matches is reported as cached and not recomputed. Wall
times go to ``timings.json`` so manifests of equal runs stay identical.
"""

from __future__ import annotations

import csv
import dataclasses as dc
import hashlib
import json
import logging
import shutil
import time
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Literal, TypedDict

import numpy as np

from .config.main import DatasetConfig, PipelineConfig, SegmentationConfig, config_hash
from .errors import InsufficientData, MissingDependency, StageFailure
from .geometry import CameraIntrinsics, Normalization
from .scene.flyaround import (
    CorruptionSchedule,
    FlyaroundDataset,
    TrajectorySpec,
    generate_flyaround,
)
from .scene.io import FRAME_NAME, load_dataset, read_mask, save_dataset, write_mask
from .scene.primitives import get_preset
from .segmentation import SegmentationParams, apply_mask, mask_iou, segment_sequence
from .warnings_ import ReconWarnings, create_warning

LOGGER = logging.getLogger(__name__)

StageName = Literal[
    "generate", "extract", "segment", "sfm", "reconstruct", "photometric", "mesh", "evaluate"
]
STAGES: tuple[StageName, ...] = (
    "generate",
    "extract",
    "segment",
    "sfm",
    "reconstruct",
    "photometric",
    "mesh",
    "evaluate",
)

STAGE_SECTIONS: dict[str, tuple[str, ...]] = {
    "generate": ("dataset",),
    "extract": ("dataset",),
    "segment": ("segmentation",),
    "sfm": ("sfm",),
    "reconstruct": ("train",),
    "photometric": ("photometric", "train"),
    "mesh": ("mesh", "photometric"),
    "evaluate": ("evaluation",),
}

MANIFEST = "manifest.json"
TIMINGS = "timings.json"


class StageResult(TypedDict):
    stage: str
    status: Literal["ran", "cached", "skipped"]
    outputs: list[str]


@dc.dataclass
class RunResult:
    manifest: dict
    stages: list[StageResult]


def select_frames(n_frames: int, downsample: int) -> list[int]:
    """Positions kept when taking every ``downsample``-th frame, starting at the first."""
    if downsample < 1:
        raise ValueError(f"downsample must be >= 1 (got {downsample})")
    return list(range(0, n_frames, downsample))


def is_synthetic(config: PipelineConfig) -> bool:
    return config.dataset.source == "synthetic"


def dependencies(stage: str, config: PipelineConfig) -> list[str]:
    """Stages whose outputs ``stage`` reads."""
    photometric = ["photometric"] if config.photometric.enabled else []
    return {
        "generate": [],
        "extract": ["generate"] if is_synthetic(config) else [],
        "segment": ["extract"],
        "sfm": ["extract", "segment"],
        "reconstruct": ["extract", "segment", "sfm"],
        "photometric": ["extract", "segment", "sfm", "reconstruct"],
        "mesh": ["sfm", "reconstruct", *photometric],
        "evaluate": ["extract", "segment", "sfm", "reconstruct", "mesh", *photometric],
    }[stage]


def planned_stages(config: PipelineConfig) -> list[str]:
    stages = list(STAGES)
    if not is_synthetic(config):
        stages.remove("generate")
    if not config.photometric.enabled:
        stages.remove("photometric")
    return stages


def build_dataset(config: DatasetConfig, seed: int = 0, show_progress: bool = False) -> FlyaroundDataset:
    """Render the synthetic fly-around described by ``config``."""
    scene = get_preset(config.preset, texture_contrast=config.texture_contrast)
    spec = TrajectorySpec(
        config.n_frames,
        radius=config.orbit_radius,
        arc=config.arc_deg,
        elevation=config.elevation_deg,
        jitter_seed=seed,
        jitter_deg=config.jitter_deg,
        jitter_radius=config.jitter_radius,
    )
    corruption = CorruptionSchedule(
        config.exposure,
        config.exposure_amplitude,
        config.exposure_period,
        config.ccm_jitter,
        tuple(config.vignette),
        config.crf_gamma,
        seed,
    )
    return generate_flyaround(
        scene,
        spec,
        CameraIntrinsics.default_for(config.width, config.height),
        corruption,
        config.background,
        sun_direction=config.sun_direction,
        background_seed=seed,
        background_period=config.background_period,
        show_progress=show_progress,
    )


def segmentation_params(config: SegmentationConfig) -> SegmentationParams:
    return SegmentationParams(
        config.dark_level,
        config.min_component_px,
        config.grabcut_iterations,
        config.propagation_margin,
        config.clutter_fraction,
    )


def heldout(frames: Sequence[int], every: int) -> list[int]:
    """Frames kept out of field training: the middle of every block of ``every``."""
    if every <= 0:
        return []
    return [f for f in frames if f % every == every // 2]


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf8")


class Pipeline:
    """Runs stages for one configuration, reading and updating its manifest."""

    def __init__(self, config: PipelineConfig) -> None:
        self.config = config
        self.root = Path(config.output_dir)

    # manifest

    def load_manifest(self) -> dict:
        path = self.root / MANIFEST
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf8"))

    def _save_manifest(self, manifest: dict) -> None:
        _write_json(self.root / MANIFEST, manifest)

    def _record_timing(self, stage: str, seconds: float) -> None:
        path = self.root / TIMINGS
        timings = json.loads(path.read_text(encoding="utf8")) if path.exists() else {}
        timings[stage] = round(seconds, 3)
        _write_json(path, timings)

    def stage_dir(self, stage: str) -> Path:
        return self.root / stage

    def _outputs(self, stage: str) -> dict[str, str]:
        directory = self.stage_dir(stage)
        return {
            path.relative_to(self.root).as_posix(): file_digest(path)
            for path in sorted(directory.rglob("*"))
            if path.is_file()
        }

    def _inputs(self, stage: str, manifest: dict) -> dict[str, str]:
        inputs: dict[str, str] = {}
        for upstream in dependencies(stage, self.config):
            entry = manifest.get(upstream)
            if entry is None or not self._intact(entry):
                raise MissingDependency(stage, upstream)
            inputs.update(entry["outputs"])
        if stage == "extract" and not is_synthetic(self.config):
            source = Path(self.config.dataset.source)
            if not source.is_dir():
                raise StageFailure(stage, FileNotFoundError(f"frame directory {source} does not exist"))
            for path in sorted(source.rglob("*")):
                if path.is_file():
                    inputs[f"source:{path.relative_to(source).as_posix()}"] = file_digest(path)
        return inputs

    def _intact(self, entry: dict) -> bool:
        for name, digest in entry["outputs"].items():
            path = self.root / name
            if not path.exists() or file_digest(path) != digest:
                return False
        return True

    # execution

    def run_stage(self, stage: str, *, force: bool = False) -> StageResult:
        """Run (or reuse) ``stage``.

        :raises MissingDependency: an upstream stage has no intact outputs
        :raises StageFailure: the stage itself raised
        """
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r} (expected one of {', '.join(STAGES)})")
        if stage not in planned_stages(self.config):
            LOGGER.info("stage %s: skipped (not part of this configuration)", stage)
            return {"stage": stage, "status": "skipped", "outputs": []}
        manifest = self.load_manifest()
        inputs = self._inputs(stage, manifest)
        digest = config_hash(self.config, STAGE_SECTIONS[stage])
        entry = manifest.get(stage)
        if entry is not None and not force:
            if entry["config_hash"] == digest and entry["inputs"] == inputs and self._intact(entry):
                LOGGER.info("stage %s: cached", stage)
                return {"stage": stage, "status": "cached", "outputs": sorted(entry["outputs"])}
            create_warning(
                LOGGER,
                f"stage {stage}: configuration or inputs changed, recomputing",
                ReconWarnings.CACHE_INVALIDATED,
                suppress_warnings=self.config.suppress_warnings,
            )
        directory = self.stage_dir(stage)
        if directory.exists():
            shutil.rmtree(directory)
        directory.mkdir(parents=True)
        LOGGER.info("stage %s: running", stage)
        start = time.perf_counter()
        try:
            STAGE_RUNNERS[stage](self, directory)
        except MissingDependency:
            raise
        except Exception as exc:
            raise StageFailure(stage, exc) from exc
        self._record_timing(stage, time.perf_counter() - start)
        outputs = self._outputs(stage)
        manifest = self.load_manifest()
        manifest[stage] = {"config_hash": digest, "inputs": inputs, "outputs": outputs}
        self._save_manifest(manifest)
        return {"stage": stage, "status": "ran", "outputs": sorted(outputs)}

    def run_all(self, *, force: bool = False) -> RunResult:
        results = [self.run_stage(stage, force=force) for stage in planned_stages(self.config)]
        return RunResult(self.load_manifest(), results)

    # stage inputs

    def dataset(self) -> FlyaroundDataset:
        return load_dataset(self.stage_dir("extract"))

    def masks(self, dataset: FlyaroundDataset) -> np.ndarray:
        directory = self.stage_dir("segment") / "masks"
        return np.stack([read_mask(directory / FRAME_NAME.format(i)) for i in range(len(dataset))])

    def masked_frames(self, dataset: FlyaroundDataset, masks: np.ndarray) -> np.ndarray:
        return np.stack([apply_mask(f, m) for f, m in zip(dataset.frames, masks)])

    def reconstruction(self):
        from .sfm.io import load_reconstruction

        return load_reconstruction(self.stage_dir("sfm"))

    def normalization(self) -> Normalization:
        path = self.stage_dir("reconstruct") / "normalization.json"
        return Normalization.from_dict(json.loads(path.read_text(encoding="utf8")))

    def field(self):
        from .neural.checkpoint import load_checkpoint

        cotrained = self.stage_dir("photometric") / "field.ckpt"
        if self.config.photometric.enabled and self.config.photometric.cotrain and cotrained.exists():
            return load_checkpoint(cotrained)
        return load_checkpoint(self.stage_dir("reconstruct") / "field.ckpt")

    def photometric_params(self):
        from .photometric.report import read_params

        if not self.config.photometric.enabled:
            return None
        return read_params(self.stage_dir("photometric") / "photometric.json")

    # stages

    def _generate(self, directory: Path) -> None:
        config = self.config
        dataset = build_dataset(config.dataset, config.seed, config.show_progress)
        save_dataset(dataset, directory)

    def _extract(self, directory: Path) -> None:
        source = self.stage_dir("generate") if is_synthetic(self.config) else Path(self.config.dataset.source)
        dataset = load_dataset(source)
        indices = select_frames(len(dataset), self.config.dataset.downsample)
        subset = dataset.subset(indices)
        save_dataset(subset, directory)
        _write_json(
            directory / "frames.json",
            {"source_frames": len(dataset), "downsample": self.config.dataset.downsample, "frame_ids": subset.frame_ids},
        )
        LOGGER.info("extracted %d of %d frames", len(subset), len(dataset))

    def _segment(self, directory: Path) -> None:
        config = self.config
        dataset = self.dataset()
        masks = segment_sequence(
            dataset.frames,
            config.segmentation.mode,  # type: ignore[arg-type]
            segmentation_params(config.segmentation),
            suppress_warnings=config.suppress_warnings,
        )
        for index, mask in enumerate(masks):
            write_mask(directory / "masks" / FRAME_NAME.format(index), mask)
        stats = {
            "mode": config.segmentation.mode,
            "empty_masks": int(sum(not m.any() for m in masks)),
            "mean_iou": None,
        }
        if dataset.gt_masks is not None:
            stats["mean_iou"] = float(np.mean([mask_iou(m, g) for m, g in zip(masks, dataset.gt_masks)]))
        _write_json(directory / "stats.json", stats)

    def _sfm(self, directory: Path) -> None:
        from .sfm.correspondences import build_correspondences
        from .sfm.incremental import run_incremental_sfm
        from .sfm.io import save_reconstruction

        config = self.config
        sfm = config.sfm
        dataset = self.dataset()
        mode = sfm.correspondences
        if mode == "auto":
            mode = "synthetic" if dataset.gt_depth is not None else "detected"
        if mode == "synthetic":
            correspondences = build_correspondences(
                dataset,
                sfm.window,
                "synthetic",
                sfm.noise_px,
                points_per_frame=sfm.points_per_frame,
                seed=config.seed,
                suppress_warnings=config.suppress_warnings,
            )
        else:
            frames = self.masked_frames(dataset, self.masks(dataset))
            correspondences = build_correspondences(
                frames,
                sfm.window,
                "detected",
                max_corners=sfm.max_corners,
                min_score=sfm.ncc_min_score,
                suppress_warnings=config.suppress_warnings,
            )
        recon = run_incremental_sfm(
            correspondences,
            dataset.intrinsics,
            sfm,
            seed=config.seed,
            suppress_warnings=config.suppress_warnings,
            show_progress=config.show_progress,
        )
        save_reconstruction(recon, directory)

    def _ray_dataset(self, frames: Sequence[int]):
        from .neural.train import RayDataset

        dataset = self.dataset()
        masks = self.masks(dataset)
        images = self.masked_frames(dataset, masks)
        recon = self.reconstruction()
        normalization = self.normalization()
        return RayDataset.from_frames(
            images[list(frames)],
            masks[list(frames)],
            [normalization.apply_pose(recon.poses[f]) for f in frames],
            recon.intrinsics,
            frame_indices=frames,
        )

    def _reconstruct(self, directory: Path) -> None:
        from .neural.checkpoint import save_checkpoint, write_loss_history
        from .neural.train import build_field, train

        config = self.config
        recon = self.reconstruction()
        normalization = Normalization.fit(recon.point_array())
        _write_json(directory / "normalization.json", normalization.as_dict())
        registered = sorted(recon.poses)
        held = heldout(registered, config.train.holdout_every)
        frames = [f for f in registered if f not in held]
        if len(frames) < 2:
            raise InsufficientData(f"{len(frames)} registered training frames; need >= 2")
        data = self._ray_dataset(frames)
        field = build_field(config.train, config.seed)
        result = train(
            field,
            data,
            config.train,
            seed=config.seed,
            show_progress=config.show_progress,
            suppress_warnings=config.suppress_warnings,
        )
        save_checkpoint(field, directory / "field.ckpt", train_frames=frames, heldout_frames=held)
        write_loss_history(result.history, directory / "loss_history.csv")

    def _photometric(self, directory: Path) -> None:
        from .neural.checkpoint import load_checkpoint, save_checkpoint
        from .photometric.fit import FitRecord, fit
        from .photometric.report import evaluation_report, write_params, write_report

        config = self.config
        dataset = self.dataset()
        recon = self.reconstruction()
        field = load_checkpoint(self.stage_dir("reconstruct") / "field.ckpt")
        data = self._ray_dataset(sorted(recon.poses))
        result = fit(
            field,
            data,
            config.photometric.schedule,
            config.photometric,
            n_frames=len(dataset),
            K=recon.intrinsics,
            train_config=config.train,
            seed=config.seed,
            show_progress=config.show_progress,
            suppress_warnings=config.suppress_warnings,
        )
        if config.photometric.cotrain:
            save_checkpoint(field, directory / "field.ckpt")
        write_params(result.params, directory / "photometric.json")
        report = evaluation_report(
            result.params, dataset.frame_ids, dataset.corruption, config.photometric.linear_threshold
        )
        write_report(report, directory)
        with (directory / "fit_history.csv").open("w", newline="", encoding="utf8") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(FitRecord.__annotations__))
            writer.writeheader()
            writer.writerows(result.history)

    def _mesh(self, directory: Path) -> None:
        from .meshing import color_vertices, export_mesh, marching_cubes, mesh_stats, sample_grid

        config = self.config
        field = self.field()
        lower, upper = config.mesh.bounds
        grid = sample_grid(field, config.mesh.resolution, (lower, upper))
        mesh = marching_cubes(grid)
        if mesh.is_empty:
            raise InsufficientData("the field has no zero level set inside the mesh bounds")
        recon = self.reconstruction()
        mesh = color_vertices(
            field,
            mesh,
            self.photometric_params(),
            K=recon.intrinsics,
            frame_index=config.mesh.color_frame,
        )
        mesh = mesh.with_vertices(self.normalization().invert(mesh.vertices))
        export_mesh(mesh, directory / "mesh.obj")
        export_mesh(mesh, directory / "mesh.ply")
        _write_json(directory / "mesh_stats.json", mesh_stats(mesh))

    def _evaluate(self, directory: Path) -> None:
        from .evaluation import heldout_psnr, pose_report, write_eval_report, write_overlays
        from .meshing import chamfer_distance, import_mesh
        from .neural.checkpoint import read_header
        from .sfm.align import align_sim3

        config = self.config
        evaluation = config.evaluation
        dataset = self.dataset()
        masks = self.masks(dataset)
        images = self.masked_frames(dataset, masks)
        recon = self.reconstruction()
        mesh = import_mesh(self.stage_dir("mesh") / "mesh.ply")
        report: dict = {
            "registration": json.loads((self.stage_dir("sfm") / "stats.json").read_text("utf8")),
            "mesh": json.loads((self.stage_dir("mesh") / "mesh_stats.json").read_text("utf8")),
            "poses": None,
            "chamfer": None,
        }
        if dataset.gt_poses is not None and len(recon.poses) >= 3:
            gt = dict(enumerate(dataset.gt_poses))
            report["poses"] = pose_report(recon.poses, gt, suppress_warnings=config.suppress_warnings)
            if dataset.scene is not None:
                alignment = align_sim3(recon.poses, gt, suppress_warnings=["orbit.*"])
                aligned = mesh.with_vertices(alignment.apply(mesh.vertices))
                mean, largest = chamfer_distance(aligned, dataset.scene, evaluation.chamfer_samples, config.seed)
                radius = dataset.scene.bounding_radius()
                report["chamfer"] = {"mean": mean, "max": largest, "mean_relative": mean / radius}

        registered = sorted(recon.poses)
        overlay = {f: images[f] for f in registered[: evaluation.overlay_frames]}
        write_overlays(mesh, recon.poses, recon.intrinsics, overlay, directory / "overlays", evaluation.overlay_opacities)

        header = read_header(self.stage_dir("reconstruct") / "field.ckpt")
        held = [f for f in header.get("heldout_frames", []) if f in recon.poses]
        if evaluation.psnr_frames:
            held = held[: evaluation.psnr_frames]
        normalization = self.normalization()
        rows = heldout_psnr(
            self.field(),
            {f: normalization.apply_pose(recon.poses[f]) for f in held},
            recon.intrinsics,
            {f: images[f] for f in held},
            self.photometric_params(),
            config.train.samples_per_ray,
        )
        compensated = [r["psnr_compensated"] for r in rows if r["psnr_compensated"] is not None]
        report["psnr"] = {
            "frames": rows,
            "mean": float(np.mean([r["psnr"] for r in rows])) if rows else None,
            "mean_compensated": float(np.mean(compensated)) if compensated else None,
        }
        photometric = self.stage_dir("photometric") / "report.json"
        if config.photometric.enabled and photometric.exists():
            summary = json.loads(photometric.read_text("utf8"))
            report["photometric"] = {
                key: summary[key] for key in ("exposure_range_ev", "linearity_score", "linear")
            }
        write_eval_report(report, directory / "eval_report.json")


STAGE_RUNNERS: dict[str, Callable[[Pipeline, Path], None]] = {
    "generate": Pipeline._generate,
    "extract": Pipeline._extract,
    "segment": Pipeline._segment,
    "sfm": Pipeline._sfm,
    "reconstruct": Pipeline._reconstruct,
    "photometric": Pipeline._photometric,
    "mesh": Pipeline._mesh,
    "evaluate": Pipeline._evaluate,
}


def run_stage(stage: str, config: PipelineConfig, *, force: bool = False) -> StageResult:
    return Pipeline(config).run_stage(stage, force=force)


def run_all(config: PipelineConfig, *, force: bool = False) -> RunResult:
    """Run every stage of ``config`` in order; the first failure stops the run."""
    return Pipeline(config).run_all(force=force)
