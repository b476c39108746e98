"""Reading and writing sparse reconstructions.

Directory layout::

    reconstruction.jsonl  one FrameRecord per registered frame
    points.ply            sparse point cloud
    intrinsics.json       refined intrinsics
    stats.json            RegistrationStats
    unregistered.json     frame -> reason
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import TypedDict

import numpy as np
import trimesh

from ..geometry import CameraIntrinsics, Pose
from .reconstruction import Reconstruction


class FrameRecord(TypedDict):
    """A line of ``reconstruction.jsonl``."""

    frame: int
    quaternion: list[float]
    """World-to-camera rotation (w, x, y, z)."""
    translation: list[float]


def save_reconstruction(recon: Reconstruction, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "reconstruction.jsonl").open("w", encoding="utf8") as handle:
        for frame in sorted(recon.poses):
            record: FrameRecord = {"frame": frame, **recon.poses[frame].as_record()}  # type: ignore[typeddict-item]
            handle.write(json.dumps(record) + "\n")
    points = recon.point_array()
    trimesh.PointCloud(points if len(points) else np.zeros((0, 3))).export(
        directory / "points.ply", encoding="binary"
    )
    (directory / "intrinsics.json").write_text(
        json.dumps(recon.intrinsics.as_dict(), indent=2), encoding="utf8"
    )
    (directory / "stats.json").write_text(json.dumps(recon.stats(), indent=2), encoding="utf8")
    (directory / "unregistered.json").write_text(
        json.dumps({str(k): v for k, v in sorted(recon.unregistered.items())}, indent=2),
        encoding="utf8",
    )
    return directory


def load_points(path: str | Path) -> np.ndarray:
    cloud = trimesh.load(Path(path), file_type="ply")
    return np.asarray(getattr(cloud, "vertices", np.zeros((0, 3))), dtype=float)


def load_reconstruction(directory: str | Path) -> Reconstruction:
    """Load poses, intrinsics and points; the track graph is not stored."""
    directory = Path(directory)
    intrinsics = CameraIntrinsics.from_dict(
        json.loads((directory / "intrinsics.json").read_text(encoding="utf8"))
    )
    poses: dict[int, Pose] = {}
    with (directory / "reconstruction.jsonl").open(encoding="utf8") as handle:
        for line in handle:
            if line.strip():
                record: FrameRecord = json.loads(line)
                poses[record["frame"]] = Pose.from_record(record)  # type: ignore[arg-type]
    unregistered = {
        int(k): v
        for k, v in json.loads(
            (directory / "unregistered.json").read_text(encoding="utf8")
        ).items()
    }
    points = load_points(directory / "points.ply")
    return Reconstruction(
        intrinsics,
        [],
        poses=poses,
        points={i: point for i, point in enumerate(points)},
        unregistered=unregistered,
        frames=sorted(set(poses) | set(unregistered)),
    )
