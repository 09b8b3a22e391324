"""Minimal numpy training engine for the two fixed architectures."""

from .checkpoint import load_checkpoint, read_tensors, save_checkpoint, write_tensors
from .model import (
    Model,
    StepContext,
    accuracy,
    flatten_params,
    forward,
    input_gradient,
    input_gradients,
    loss_and_grads,
    mean_loss,
    predict,
    predict_batch,
    unflatten_params,
)
from .optim import ConstantSchedule, CosineSchedule, LrSchedule, OptimizerState, adam_step, init_state, lr_at
from .spec import ModelKind, ModelSpec

__all__ = [
    "ConstantSchedule",
    "CosineSchedule",
    "LrSchedule",
    "Model",
    "ModelKind",
    "ModelSpec",
    "OptimizerState",
    "StepContext",
    "accuracy",
    "adam_step",
    "flatten_params",
    "forward",
    "init_state",
    "input_gradient",
    "input_gradients",
    "load_checkpoint",
    "loss_and_grads",
    "lr_at",
    "mean_loss",
    "predict",
    "predict_batch",
    "read_tensors",
    "save_checkpoint",
    "unflatten_params",
    "write_tensors",
]
