"""Minimal deterministic neural-network engine."""

from grasplab.nn.model import (
    ModelCheckpoint,
    ShapeError,
    build_model,
    forward,
    gradients,
    init_params,
    input_gradient,
    loss,
    predict,
)
from grasplab.nn.serialize import load_model, save_model
from grasplab.nn.train import TrainConfig, TrainingDivergedError, sgd_train

__all__ = [
    "ModelCheckpoint",
    "ShapeError",
    "TrainConfig",
    "TrainingDivergedError",
    "build_model",
    "forward",
    "gradients",
    "init_params",
    "input_gradient",
    "load_model",
    "loss",
    "predict",
    "save_model",
    "sgd_train",
]
