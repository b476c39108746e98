"""Incremental structure from motion."""

from .align import Sim3Alignment, align_sim3, umeyama
from .bundle import BundleParams, BundleReport, bundle_adjust, bundle_adjust_with_report, bundle_cost
from .correspondences import (
    Correspondences,
    Track,
    build_correspondences,
    build_tracks,
    window_pairs,
)
from .incremental import run_incremental_sfm
from .io import load_reconstruction, save_reconstruction
from .pnp import PnPResult, register_pnp
from .reconstruction import Reconstruction, RegistrationStats
from .two_view import TwoViewResult, estimate_two_view

__all__ = (
    "BundleParams",
    "BundleReport",
    "Correspondences",
    "PnPResult",
    "Reconstruction",
    "RegistrationStats",
    "Sim3Alignment",
    "Track",
    "TwoViewResult",
    "align_sim3",
    "build_correspondences",
    "build_tracks",
    "bundle_adjust",
    "bundle_adjust_with_report",
    "bundle_cost",
    "estimate_two_view",
    "load_reconstruction",
    "register_pnp",
    "run_incremental_sfm",
    "save_reconstruction",
    "umeyama",
    "window_pairs",
)
