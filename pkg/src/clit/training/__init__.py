"""Training pipeline: patch preparation, strategies and the optimization loop."""

from .data import (
    PatchPair,
    ScaleDraw,
    augment,
    clip_scale,
    crop_pair,
    prepare_patch,
    sample_pixels,
    sample_scale,
)
from .plan import Stage, build_stages, draw_scales, scale_schedule
from .trainer import TrainResult, batch_loss, fit_single_image, run_plan, train_step

__all__ = [
    "PatchPair",
    "ScaleDraw",
    "Stage",
    "TrainResult",
    "augment",
    "batch_loss",
    "build_stages",
    "clip_scale",
    "crop_pair",
    "draw_scales",
    "fit_single_image",
    "prepare_patch",
    "run_plan",
    "sample_pixels",
    "sample_scale",
    "scale_schedule",
    "train_step",
]
