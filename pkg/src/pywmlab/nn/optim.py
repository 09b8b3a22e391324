"""Adam with decoupled weight decay and the learning-rate schedules."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, replace
from typing import Annotated, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import DivergedTrainingError, RejectedInputError
from .model import Model, ParamDict, StepContext

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class CosineSchedule(BaseModel):
    """Cosine decay from ``lr_start`` to ``lr_end`` over ``total_epochs``."""

    kind: Literal["cosine"] = "cosine"
    lr_start: float = Field(default=1e-3, gt=0)
    lr_end: float = Field(default=1e-5, gt=0)
    total_epochs: int | None = Field(default=None, ge=1)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_order(self) -> CosineSchedule:
        if self.lr_start < self.lr_end:
            raise ValueError(f"lr_start ({self.lr_start}) must be >= lr_end ({self.lr_end})")
        return self


class ConstantSchedule(BaseModel):
    """Fixed learning rate (fine-tune attack, restore, blend)."""

    kind: Literal["constant"] = "constant"
    lr: float = Field(default=1e-4, ge=0)

    model_config = ConfigDict(frozen=True)


LrSchedule = Annotated[CosineSchedule | ConstantSchedule, Field(discriminator="kind")]


def lr_at(schedule: CosineSchedule | ConstantSchedule, epoch: int, total_epochs: int | None = None) -> float:
    """Learning rate at ``epoch`` (0-based progress) of ``total_epochs``.

    Args:
        schedule: Schedule to evaluate.
        epoch: Progress in epochs, ``0 <= epoch <= total_epochs``.
        total_epochs: Overrides ``schedule.total_epochs`` when given.

    Returns:
        ``lr_end + 0.5 * (lr_start - lr_end) * (1 + cos(pi * epoch / total))`` for cosine,
        the fixed rate for constant schedules.

    Raises:
        RejectedInputError: If the epoch lies outside ``[0, total]`` or no total is known.
    """
    if isinstance(schedule, ConstantSchedule):
        if epoch < 0 or (total_epochs is not None and epoch > total_epochs):
            raise RejectedInputError(f"epoch {epoch} outside [0, {total_epochs}]")
        return schedule.lr
    total = total_epochs if total_epochs is not None else schedule.total_epochs
    if total is None or total < 1:
        raise RejectedInputError("cosine schedule needs total_epochs >= 1")
    if not 0 <= epoch <= total:
        raise RejectedInputError(f"epoch {epoch} outside [0, {total}]")
    if epoch == total:
        return schedule.lr_end
    return schedule.lr_end + 0.5 * (schedule.lr_start - schedule.lr_end) * (1.0 + math.cos(math.pi * epoch / total))


@dataclass(frozen=True, slots=True)
class OptimizerState:
    """Adam moments per parameter plus step counter and hyper-parameters."""

    m: ParamDict
    v: ParamDict
    t: int
    lr: float
    weight_decay: float
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS

    def with_lr(self, lr: float) -> OptimizerState:
        """Return the same state with a new learning rate."""
        return replace(self, lr=lr)


def init_state(model: Model, *, lr: float, weight_decay: float = 1e-4) -> OptimizerState:
    """Zero moments shaped like ``model``'s parameters (kept in float64)."""
    zeros = {k: np.zeros(v.shape, dtype=np.float64) for k, v in model.params.items()}
    return OptimizerState(m=zeros, v={k: z.copy() for k, z in zeros.items()}, t=0, lr=lr, weight_decay=weight_decay)


def adam_step(
    model: Model,
    grads: Mapping[str, NDArray[np.floating]],
    state: OptimizerState,
    *,
    trainable: Mapping[str, bool] | None = None,
    where: StepContext | None = None,
) -> tuple[Model, OptimizerState]:
    """Apply one bias-corrected Adam update with decoupled weight decay.

    ``p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p``

    Parameters mapped to ``False`` in ``trainable`` keep both their values and their moments.
    The step counter always advances.

    Raises:
        RejectedInputError: If gradient names or shapes do not match the model.
        DivergedTrainingError: If an updated parameter is not finite.
    """
    if set(grads) != set(model.params):
        raise RejectedInputError("gradient names do not match model parameters")
    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params: ParamDict = {}
    new_m: ParamDict = {}
    new_v: ParamDict = {}
    for name, p in model.params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise RejectedInputError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if trainable is not None and not trainable.get(name, True):
            new_params[name], new_m[name], new_v[name] = p, state.m[name], state.v[name]
            continue
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        p64 = p.astype(np.float64)
        updated = p64 - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps) - state.lr * state.weight_decay * p64
        if not np.all(np.isfinite(updated)):
            ctx = where or StepContext()
            raise DivergedTrainingError(f"non-finite update for {name}", phase=ctx.phase, epoch=ctx.epoch, step=ctx.step)
        new_params[name] = updated.astype(p.dtype)
        new_m[name], new_v[name] = m, v
    return Model(model.spec, new_params), replace(state, m=new_m, v=new_v, t=t)
