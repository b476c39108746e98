"""Field checkpoints and loss histories.

A checkpoint is the magic line ``ORBITSDF 1``, a little-endian ``uint32``
header length, a JSON header (architecture, sharpness, tensor names and
shapes) and the tensors as one little-endian float32 blob, in header order.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import torch

from .field import SdfField
from .train import LossRecord

MAGIC = b"ORBITSDF 1\n"


def save_checkpoint(field: SdfField, path: str | Path, **extra) -> Path:
    """Write ``field``; ``extra`` JSON-serialisable items are kept in the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = field.state_dict()
    header = {
        "config": field.config(),
        "sharpness": float(field.sharpness),
        "tensors": [{"name": name, "shape": list(tensor.shape)} for name, tensor in state.items()],
        **extra,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf8")
    blob = b"".join(
        np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4").tobytes()
        for tensor in state.values()
    )
    path.write_bytes(MAGIC + np.array([len(encoded)], dtype="<u4").tobytes() + encoded + blob)
    return path


def read_header(path: str | Path) -> dict:
    return _split(Path(path).read_bytes())[0]


def _split(data: bytes) -> tuple[dict, bytes]:
    if not data.startswith(MAGIC):
        raise ValueError("not an orbit-recon field checkpoint")
    offset = len(MAGIC)
    (length,) = np.frombuffer(data[offset : offset + 4], dtype="<u4")
    offset += 4
    header = json.loads(data[offset : offset + int(length)].decode("utf8"))
    return header, data[offset + int(length) :]


def load_checkpoint(path: str | Path) -> SdfField:
    header, blob = _split(Path(path).read_bytes())
    config = dict(header["config"])
    active_levels = config.pop("active_levels")
    field = SdfField(**config)
    values = np.frombuffer(blob, dtype="<f4")
    state = {}
    offset = 0
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"], dtype=int))
        state[entry["name"]] = torch.from_numpy(
            values[offset : offset + size].astype(np.float32).reshape(entry["shape"])
        )
        offset += size
    if offset != len(values):
        raise ValueError(f"checkpoint blob holds {len(values)} values, header describes {offset}")
    field.load_state_dict(state)
    field.active_levels = active_levels
    field.eval()
    return field


def write_loss_history(history: Sequence[LossRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(LossRecord.__annotations__))
        writer.writeheader()
        for record in history:
            writer.writerow({key: record[key] for key in LossRecord.__annotations__})  # type: ignore[literal-required]
    return path


def read_loss_history(path: str | Path) -> list[LossRecord]:
    with Path(path).open(newline="", encoding="utf8") as handle:
        return [
            {  # type: ignore[misc]
                "iteration": int(row["iteration"]),
                "rgb": float(row["rgb"]),
                "eikonal": float(row["eikonal"]),
                "mask": float(row["mask"]),
                "total": float(row["total"]),
            }
            for row in csv.DictReader(handle)
        ]
