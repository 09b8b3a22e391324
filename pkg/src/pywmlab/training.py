"""Shared epoch loop: step policies, per-epoch evaluation rows and snapshots."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numpy.typing import NDArray

from .data import LabeledDataset, batches
from .errors import RejectedInputError
from .models.trace import MetricsRow, Phase, RunTrace
from .nn import (
    ConstantSchedule,
    CosineSchedule,
    Model,
    StepContext,
    accuracy,
    adam_step,
    init_state,
    loss_and_grads,
    lr_at,
    mean_loss,
    predict_batch,
)
from .nn.model import ParamDict
from .utils import derive_seed

log = logging.getLogger(__name__)

Step = tuple[NDArray[np.float32], NDArray[np.int64]]
EpochSteps = Callable[[int], Iterable[Step]]
BatchGuard = Callable[[NDArray[np.float32]], None]


class StepPolicy(Protocol):
    """How one optimizer step computes its gradient and which parameters it may touch."""

    def gradients(self, model: Model, x: NDArray[np.float32], y: NDArray[np.int64], *, step: int, where: StepContext) -> tuple[float, ParamDict]:
        """Return ``(loss, gradients)`` for the batch."""
        ...

    def trainable(self, model: Model, step: int) -> Mapping[str, bool] | None:
        """Return a parameter-name mask, or ``None`` when every parameter trains."""
        ...


class PlainStep:
    """Mean cross-entropy gradient on the whole batch, every parameter trainable."""

    def gradients(self, model: Model, x: NDArray[np.float32], y: NDArray[np.int64], *, step: int, where: StepContext) -> tuple[float, ParamDict]:
        """Return the plain loss and gradients."""
        return loss_and_grads(model, x, y, where=where)

    def trainable(self, model: Model, step: int) -> Mapping[str, bool] | None:
        """All parameters train."""
        return None


def shuffled_steps(dataset: LabeledDataset, batch_size: int, seed: int, *tags: object) -> EpochSteps:
    """Epoch-indexed plain mini-batches with a per-epoch reshuffle."""

    def steps(epoch: int) -> Iterable[Step]:
        return [(b.x, b.y) for b in batches(dataset, batch_size, derive_seed(seed, "shuffle", *tags, epoch))]

    return steps


@dataclass(slots=True)
class Trainer:
    """Runs ``epochs`` epochs of Adam and records one row per epoch (plus epoch 0).

    Attributes:
        run_id: Run identifier copied into every row.
        phase: Phase tag of the rows.
        schedule: Learning-rate schedule, evaluated at ``epoch - 1`` for epoch ``epoch``.
        epochs: Number of training epochs.
        train_set: Data whose mean loss is reported for epoch 0.
        test_set: Held-out evaluation set.
        trigger_set: Trigger evaluation set, if one exists yet.
        weight_decay: Decoupled weight decay.
        policy: Gradient/mask policy.
        guard: Called on every training batch before its gradient is computed.
        keep_snapshots: Store flattened parameters after every epoch (epoch 0 included).
        record_wall_time: Write real epoch wall times instead of 0.
        workers: Threads for evaluation fan-out.
        reference_labels: Victim predictions on ``test_set``; when given, every row records the
            trained model's agreement with them.
    """

    run_id: str
    phase: Phase
    schedule: CosineSchedule | ConstantSchedule
    epochs: int
    train_set: LabeledDataset
    test_set: LabeledDataset
    trigger_set: LabeledDataset | None = None
    weight_decay: float = 1e-4
    policy: StepPolicy = field(default_factory=PlainStep)
    guard: BatchGuard | None = None
    keep_snapshots: bool = False
    record_wall_time: bool = False
    workers: int = 1
    reference_labels: NDArray[np.intp] | None = None

    def __post_init__(self) -> None:
        """Validate the epoch count."""
        if self.epochs < 1:
            raise RejectedInputError(f"epochs must be >= 1, got {self.epochs}")
        if self.reference_labels is not None and len(self.reference_labels) != len(self.test_set):
            raise RejectedInputError("reference labels must cover the test set")

    def evaluate(self, model: Model, *, epoch: int, lr: float, train_loss: float, wall_ms: int = 0) -> MetricsRow:
        """Build the metrics row for ``model`` at ``epoch``."""
        trig_acc = trig_loss = None
        if self.trigger_set is not None and len(self.trigger_set):
            trig_acc = accuracy(model, self.trigger_set, workers=self.workers)
            trig_loss = mean_loss(model, self.trigger_set)
        agree = None
        if self.reference_labels is not None and len(self.test_set):
            preds = predict_batch(model, self.test_set.samples, workers=self.workers)
            agree = float(np.mean(preds == self.reference_labels))
        return MetricsRow(
            run_id=self.run_id,
            phase=self.phase,
            epoch=epoch,
            lr=lr,
            test_acc=accuracy(model, self.test_set, workers=self.workers),
            trigger_acc=trig_acc,
            train_loss=train_loss,
            trigger_loss=trig_loss,
            wall_ms=wall_ms if self.record_wall_time else 0,
            agreement=agree,
        )

    def fit(self, model: Model, steps: EpochSteps) -> tuple[Model, RunTrace]:
        """Train ``model`` on the steps produced for each epoch (1-based).

        Raises:
            DivergedTrainingError: With phase, epoch and step when a loss or update blows up.
        """
        trace = RunTrace(run_id=self.run_id, phase=self.phase)
        state = init_state(model, lr=lr_at(self.schedule, 0, self.epochs), weight_decay=self.weight_decay)
        trace.rows.append(self.evaluate(model, epoch=0, lr=state.lr, train_loss=mean_loss(model, self.train_set)))
        if self.keep_snapshots:
            trace.snapshots.append(model.flatten().astype(np.float64))
        self._log_row(trace.rows[-1])

        step = 0
        for epoch in range(1, self.epochs + 1):
            lr = lr_at(self.schedule, epoch - 1, self.epochs)
            state = state.with_lr(lr)
            started = time.perf_counter()
            losses: list[float] = []
            for x, y in steps(epoch):
                if self.guard is not None:
                    self.guard(x)
                where = StepContext(phase=str(self.phase), epoch=epoch, step=step)
                loss, grads = self.policy.gradients(model, x, y, step=step, where=where)
                model, state = adam_step(model, grads, state, trainable=self.policy.trainable(model, step), where=where)
                losses.append(loss)
                step += 1
            wall = int(round((time.perf_counter() - started) * 1000))
            train_loss = float(np.mean(losses)) if losses else mean_loss(model, self.train_set)
            trace.rows.append(self.evaluate(model, epoch=epoch, lr=lr, train_loss=train_loss, wall_ms=wall))
            if self.keep_snapshots:
                trace.snapshots.append(model.flatten().astype(np.float64))
            self._log_row(trace.rows[-1])
        return model, trace

    def _log_row(self, row: MetricsRow) -> None:
        trig = "-" if row.trigger_acc is None else f"{row.trigger_acc:.4f}"
        log.info(
            "[%s] %s epoch %d/%d lr=%.2e test=%.4f trigger=%s loss=%.4f",
            self.run_id,
            self.phase,
            row.epoch,
            self.epochs,
            row.lr,
            row.test_acc,
            trig,
            row.train_loss,
        )
