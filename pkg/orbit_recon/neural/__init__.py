"""Neural signed distance field: hash-grid encoding, volume rendering, training."""

from .checkpoint import load_checkpoint, read_loss_history, save_checkpoint, write_loss_history
from .encoding import HashGridEncoding, encode, level_resolutions
from .field import AnalyticField, SdfField
from .render import render_image, render_rays
from .train import LossRecord, RayDataset, TrainResult, build_field, train

__all__ = (
    "AnalyticField",
    "HashGridEncoding",
    "LossRecord",
    "RayDataset",
    "SdfField",
    "TrainResult",
    "build_field",
    "encode",
    "level_resolutions",
    "load_checkpoint",
    "read_loss_history",
    "render_image",
    "render_rays",
    "save_checkpoint",
    "train",
    "write_loss_history",
)
