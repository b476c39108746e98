"""Reading and writing fly-around datasets.

Directory layout::

    frames/%06d.png     8-bit RGB
    masks/%06d.png      8-bit gray, 0/255 (ground truth)
    depth/%06d.bin      row-major little-endian float32 z-depth, inf on misses
    poses.jsonl         one PoseRecord per frame
    intrinsics.json
    corruption.json     ground-truth photometric parameters
    scene.json          the analytic scene and sun direction

Real footage only needs ``frames/`` (and optionally ``intrinsics.json``).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import TypedDict

import cv2
import numpy as np

from ..geometry import CameraIntrinsics, Pose
from ..photometric.params import PhotometricParams
from .flyaround import FlyaroundDataset
from .primitives import SceneModel

FRAME_NAME = "{:06d}.png"
DEPTH_NAME = "{:06d}.bin"


class PoseRecord(TypedDict):
    """A line of ``poses.jsonl``."""

    index: int
    """Position of the frame in the directory."""
    frame_id: int
    """Index of the frame in the source sequence."""
    quaternion: list[float]
    """World-to-camera rotation (w, x, y, z)."""
    translation: list[float]
    background: str


def read_image(path: Path) -> np.ndarray:
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise OSError(f"could not read image {path}")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def write_image(path: Path, image: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if image.ndim == 3:
        image = cv2.cvtColor(image, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), image):
        raise OSError(f"could not write image {path}")


def read_mask(path: Path) -> np.ndarray:
    mask = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if mask is None:
        raise OSError(f"could not read mask {path}")
    return mask > 127


def write_mask(path: Path, mask: np.ndarray) -> None:
    write_image(path, np.where(mask, 255, 0).astype(np.uint8))


def write_depth(path: Path, depth: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_depth(path: Path, K: CameraIntrinsics) -> np.ndarray:
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    return data.reshape(K.height, K.width).astype(np.float32)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf8")


def save_dataset(dataset: FlyaroundDataset, directory: str | Path) -> list[Path]:
    """Write ``dataset`` under ``directory``; returns the written files."""
    directory = Path(directory)
    written: list[Path] = []
    for index, frame in enumerate(dataset.frames):
        path = directory / "frames" / FRAME_NAME.format(index)
        write_image(path, frame)
        written.append(path)
    path = directory / "intrinsics.json"
    _write_json(path, dataset.intrinsics.as_dict())
    written.append(path)
    if not dataset.has_ground_truth:
        return written

    assert dataset.gt_masks is not None and dataset.gt_depth is not None
    for index in range(len(dataset)):
        path = directory / "masks" / FRAME_NAME.format(index)
        write_mask(path, dataset.gt_masks[index])
        written.append(path)
        path = directory / "depth" / DEPTH_NAME.format(index)
        write_depth(path, dataset.gt_depth[index])
        written.append(path)
    records: list[PoseRecord] = [
        {
            "index": index,
            "frame_id": dataset.frame_ids[index],
            "background": (dataset.backgrounds or ["unknown"] * len(dataset))[index],
            **pose.as_record(),  # type: ignore[typeddict-item]
        }
        for index, pose in enumerate(dataset.gt_poses or [])
    ]
    path = directory / "poses.jsonl"
    path.write_text(
        "".join(json.dumps(record, sort_keys=True) + "\n" for record in records),
        encoding="utf8",
    )
    written.append(path)
    if dataset.corruption is not None:
        path = directory / "corruption.json"
        _write_json(path, dataset.corruption.as_dict())
        written.append(path)
    if dataset.scene is not None:
        path = directory / "scene.json"
        _write_json(
            path,
            {
                "scene": dataset.scene.as_dict(),
                "sun_direction": None
                if dataset.sun_direction is None
                else dataset.sun_direction.tolist(),
            },
        )
        written.append(path)
    return written


def load_frames_directory(directory: str | Path) -> FlyaroundDataset:
    """Load a plain directory of frames (real footage, no ground truth).

    Accepts either ``directory/frames/*.png`` or ``directory/*.png``; numeric
    file stems are used as frame ids.
    """
    directory = Path(directory)
    frame_dir = directory / "frames" if (directory / "frames").is_dir() else directory
    paths = sorted(p for p in frame_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not paths:
        raise FileNotFoundError(f"no frames found in {frame_dir}")
    frames = np.stack([read_image(p) for p in paths])
    frame_ids = [int(p.stem) if p.stem.isdigit() else i for i, p in enumerate(paths)]
    intrinsics_path = directory / "intrinsics.json"
    if intrinsics_path.exists():
        K = CameraIntrinsics.from_dict(json.loads(intrinsics_path.read_text("utf8")))
    else:
        K = CameraIntrinsics.default_for(frames.shape[2], frames.shape[1])
    return FlyaroundDataset(frames, K, frame_ids)


def load_dataset(directory: str | Path) -> FlyaroundDataset:
    """Load a dataset written by :func:`save_dataset` (ground truth when present)."""
    directory = Path(directory)
    dataset = load_frames_directory(directory)
    poses_path = directory / "poses.jsonl"
    if not poses_path.exists():
        return dataset
    records: list[PoseRecord] = [
        json.loads(line)
        for line in poses_path.read_text("utf8").splitlines()
        if line.strip()
    ]
    records.sort(key=lambda r: r["index"])
    K = dataset.intrinsics
    n_frames = len(dataset)
    masks = np.stack(
        [read_mask(directory / "masks" / FRAME_NAME.format(i)) for i in range(n_frames)]
    )
    depth = np.stack(
        [read_depth(directory / "depth" / DEPTH_NAME.format(i), K) for i in range(n_frames)]
    )
    corruption = None
    if (directory / "corruption.json").exists():
        corruption = PhotometricParams.from_dict(
            json.loads((directory / "corruption.json").read_text("utf8"))
        )
    scene = sun = None
    if (directory / "scene.json").exists():
        data = json.loads((directory / "scene.json").read_text("utf8"))
        scene = SceneModel.from_dict(data["scene"])
        if data.get("sun_direction") is not None:
            sun = np.array(data["sun_direction"])
    return FlyaroundDataset(
        dataset.frames,
        K,
        [r["frame_id"] for r in records],
        gt_poses=[Pose.from_record(r) for r in records],  # type: ignore[arg-type]
        gt_masks=masks,
        gt_depth=depth,
        corruption=corruption,
        backgrounds=[r["background"] for r in records],
        scene=scene,
        sun_direction=sun,
    )
