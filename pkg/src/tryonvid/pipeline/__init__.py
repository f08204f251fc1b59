"""Toy dual-network try-on generator: synthetic data, training, sampling."""

from tryonvid.pipeline.synth import MotionSpec, generate_synthetic_clip
from tryonvid.pipeline.train import (
    ModelState,
    TrainConfig,
    infer_clip,
    load_checkpoint,
    overfit_clip,
    save_checkpoint,
    train_step,
)

__all__ = [
    "ModelState",
    "MotionSpec",
    "TrainConfig",
    "generate_synthetic_clip",
    "infer_clip",
    "load_checkpoint",
    "overfit_clip",
    "save_checkpoint",
    "train_step",
]
