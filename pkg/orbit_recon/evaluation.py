"""Image, pose and surface metrics, mesh overlays and the registration benchmark."""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import TypedDict

import cv2
import numpy as np

from .errors import InsufficientData, OrbitReconError
from .geometry import CameraIntrinsics, Pose, pixel_rays
from .meshing import TriangleMesh
from .sfm.align import align_sim3
from .sfm.reconstruction import Reconstruction

LOGGER = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0
OVERLAY_OPACITIES = (0.0, 0.5, 1.0)


def psnr(image_a: np.ndarray, image_b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB of two images with values in ``[0, 1]``.

    Identical images give :data:`PSNR_CAP_DB`.
    """
    a = np.asarray(image_a, dtype=float)
    b = np.asarray(image_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def render_mesh_view(mesh: TriangleMesh, pose: Pose, K: CameraIntrinsics) -> dict[str, np.ndarray]:
    """Ray-cast ``mesh`` from ``pose``.

    :returns: ``image`` ``(H, W, 3)`` headlight shading (vertex colours when
        present), ``mask`` and camera-z ``depth`` (``inf`` on misses)
    """
    if mesh.is_empty:
        raise InsufficientData("cannot render an empty mesh")
    shape = (K.height, K.width)
    origins, directions = pixel_rays(pose, K)
    origins = origins.reshape(-1, 3)
    directions = directions.reshape(-1, 3)
    tri = mesh.to_trimesh()
    locations, ray_index, face_index = tri.ray.intersects_location(
        origins, directions, multiple_hits=False
    )
    image = np.zeros((len(origins), 3))
    mask = np.zeros(len(origins), bool)
    depth = np.full(len(origins), np.inf)
    if len(ray_index):
        normals = mesh.face_normals()[face_index]
        shading = 0.2 + 0.8 * np.abs(np.einsum("ij,ij->i", normals, directions[ray_index]))
        if mesh.colors is not None:
            albedo = mesh.colors[mesh.faces[face_index]].mean(axis=1) / 255.0
        else:
            albedo = np.full((len(ray_index), 3), 0.8)
        image[ray_index] = albedo * shading[:, None]
        mask[ray_index] = True
        depth[ray_index] = pose.apply(locations)[:, 2]
    return {
        "image": image.reshape(*shape, 3),
        "mask": mask.reshape(shape),
        "depth": depth.reshape(shape),
    }


def blend(frame: np.ndarray, render: np.ndarray, opacity: float) -> np.ndarray:
    """``(1 - opacity) * frame + opacity * render`` in the dtype of ``frame``.

    uint8 frames are blended in ``[0, 1]`` and quantized back; float frames
    stay float, so opacity 0 returns ``frame`` bit for bit.
    """
    if not 0.0 <= opacity <= 1.0:
        raise ValueError(f"opacity must be in [0, 1] (got {opacity})")
    frame = np.asarray(frame)
    base = frame.astype(float) / (255.0 if frame.dtype == np.uint8 else 1.0)
    mixed = (1.0 - opacity) * base + opacity * np.asarray(render, dtype=float)
    if np.issubdtype(frame.dtype, np.floating):
        return mixed.astype(frame.dtype)
    return np.round(np.clip(mixed, 0.0, 1.0) * 255).astype(np.uint8)


def reproject_overlay(
    mesh: TriangleMesh,
    pose: Pose,
    K: CameraIntrinsics,
    frame: np.ndarray,
    opacity: float = 0.5,
) -> np.ndarray:
    """The mesh rendered from ``pose`` blended over ``frame``.

    Opacity 0 returns ``frame``, opacity 1 the pure render.
    """
    return blend(frame, render_mesh_view(mesh, pose, K)["image"], opacity)


def write_overlays(
    mesh: TriangleMesh,
    poses: Mapping[int, Pose],
    K: CameraIntrinsics,
    frames: Mapping[int, np.ndarray],
    directory: str | Path,
    opacities: Iterable[float] = OVERLAY_OPACITIES,
) -> list[Path]:
    """Write ``overlay_<frame>_<opacity>.png`` for every frame in ``frames``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, frame in frames.items():
        render = render_mesh_view(mesh, poses[index], K)["image"]
        for opacity in opacities:
            path = directory / f"overlay_{index:06d}_{opacity:.1f}.png"
            image = blend(frame, render, opacity)
            if image.dtype != np.uint8:
                image = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
            cv2.imwrite(str(path), cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
            paths.append(path)
    return paths


class PoseReport(TypedDict):
    frames: list[int]
    rotation_errors_deg: list[float]
    translation_errors: list[float]
    mean_rotation_deg: float
    max_rotation_deg: float
    mean_translation: float
    max_translation: float
    scale: float
    degenerate: bool


def pose_report(
    poses: Mapping[int, Pose] | Reconstruction,
    gt_poses: Mapping[int, Pose] | Sequence[Pose],
    *,
    suppress_warnings: Sequence[str] = (),
) -> PoseReport:
    """Pose errors after similarity alignment to ground truth.

    :raises InsufficientData: fewer than three frames with ground truth
    """
    if isinstance(poses, Reconstruction):
        poses = poses.poses
    alignment = align_sim3(poses, gt_poses, suppress_warnings=suppress_warnings)
    rotation = alignment.rotation_errors_deg
    translation = alignment.translation_errors
    return {
        "frames": [int(f) for f in alignment.frames],
        "rotation_errors_deg": rotation.tolist(),
        "translation_errors": translation.tolist(),
        "mean_rotation_deg": float(rotation.mean()),
        "max_rotation_deg": float(rotation.max()),
        "mean_translation": float(translation.mean()),
        "max_translation": float(translation.max()),
        "scale": float(alignment.scale),
        "degenerate": alignment.degenerate,
    }


class PsnrRow(TypedDict):
    frame: int
    psnr: float
    psnr_compensated: float | None


def heldout_psnr(
    field,
    poses: Mapping[int, Pose],
    K: CameraIntrinsics,
    targets: Mapping[int, np.ndarray],
    photometric=None,
    n_samples: int = 64,
) -> list[PsnrRow]:
    """PSNR of field renders against ``targets``, with and without compensation.

    ``poses`` are in field coordinates and keyed like ``targets`` (frame
    positions, which also select photometric parameters).
    """
    from .neural.render import render_image

    rows: list[PsnrRow] = []
    for index, target in targets.items():
        target = np.asarray(target, dtype=float) / (255.0 if target.dtype == np.uint8 else 1.0)
        plain = render_image(field, poses[index], K, n_samples)["image"]
        compensated = None
        if photometric is not None:
            rendered = render_image(
                field, poses[index], K, n_samples, photometric=photometric, frame_index=index
            )
            compensated = psnr(rendered["image"], target)
        rows.append({"frame": int(index), "psnr": psnr(plain, target), "psnr_compensated": compensated})
    return rows


class BenchmarkRow(TypedDict):
    seed: int
    background: str
    masked: bool
    registered: int
    frames: int
    registered_fraction: float
    mean_reprojection_error: float
    error: str


def registration_benchmark(
    config,
    seeds: Sequence[int] = (0,),
    backgrounds: Sequence[str] = ("black", "alternating"),
    masking: Sequence[bool] = (True, False),
    *,
    show_progress: bool = False,
) -> list[BenchmarkRow]:
    """Register the same fly-around with and without background masking.

    Correspondences are always detected, since the failure being measured
    comes from matching background texture. Stage errors are recorded in the
    ``error`` column instead of being raised.
    """
    from .config.main import SfmConfig
    from .pipeline import build_dataset, segmentation_params
    from .segmentation import apply_mask, segment_sequence
    from .sfm.correspondences import detected_correspondences
    from .sfm.incremental import run_incremental_sfm

    rows: list[BenchmarkRow] = []
    sfm_config: SfmConfig = config.sfm
    mode = config.segmentation.mode if config.segmentation.mode != "off" else "video"
    for seed in seeds:
        for background in backgrounds:
            dataset = build_dataset(config.dataset.copy(background=background), seed)
            for masked in masking:
                frames = dataset.frames
                if masked:
                    masks = segment_sequence(
                        frames, mode, segmentation_params(config.segmentation), suppress_warnings=["orbit.*"]
                    )
                    frames = np.stack([apply_mask(f, m) for f, m in zip(frames, masks)])
                row: BenchmarkRow = {
                    "seed": seed,
                    "background": background,
                    "masked": masked,
                    "registered": 0,
                    "frames": len(frames),
                    "registered_fraction": 0.0,
                    "mean_reprojection_error": float("nan"),
                    "error": "",
                }
                try:
                    correspondences = detected_correspondences(
                        frames,
                        sfm_config.window,
                        max_corners=sfm_config.max_corners,
                        min_score=sfm_config.ncc_min_score,
                    )
                    recon = run_incremental_sfm(
                        correspondences,
                        dataset.intrinsics,
                        sfm_config,
                        seed=seed,
                        suppress_warnings=["orbit.*"],
                        show_progress=show_progress,
                    )
                except OrbitReconError as exc:
                    row["error"] = f"{type(exc).__name__}: {exc}"
                else:
                    row["registered"] = len(recon.poses)
                    row["registered_fraction"] = len(recon.poses) / len(frames)
                    row["mean_reprojection_error"] = recon.mean_reprojection_error()
                LOGGER.info(
                    "benchmark seed %d, %s background, %s: %d/%d registered",
                    seed,
                    background,
                    "masked" if masked else "unmasked",
                    row["registered"],
                    row["frames"],
                )
                rows.append(row)
    return rows


def write_benchmark(rows: Sequence[BenchmarkRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(BenchmarkRow.__annotations__))
        writer.writeheader()
        writer.writerows(rows)
    return path


def silhouette_iou(mesh: TriangleMesh, pose: Pose, K: CameraIntrinsics, mask: np.ndarray) -> float:
    from .segmentation import mask_iou

    return mask_iou(render_mesh_view(mesh, pose, K)["mask"], mask)


def write_eval_report(report: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf8")
    return path


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")

