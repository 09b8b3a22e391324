"""Clean pretraining and watermark embedding.

Embedding trains on the union of the pretrain split and the trigger set: every
optimizer step concatenates one train batch with one trigger batch. The strategy
decides how that step's gradient is formed:

- ``joint``: plain cross-entropy gradient (data poisoning).
- ``rotation``: only one layer group trains per step, round-robin over the layers.
- ``smoothed``: the gradient is the mean over noised copies of the parameters.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from typing import Annotated, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

from .data import LabeledDataset, batches
from .errors import RejectedInputError
from .models.trace import Phase, RunTrace
from .nn import CosineSchedule, LrSchedule, Model, ModelSpec, StepContext, accuracy, loss_and_grads
from .nn.model import ParamDict, trainable_mask
from .training import EpochSteps, PlainStep, Step, StepPolicy, Trainer, shuffled_steps
from .triggers import TriggerSet
from .utils import derive_seed, rng_for

log = logging.getLogger(__name__)


class JointPoison(BaseModel):
    """Plain joint training on train and trigger samples."""

    kind: Literal["joint"] = "joint"

    model_config = ConfigDict(frozen=True)


class LayerRotation(BaseModel):
    """One trainable layer group per step, rotating round-robin."""

    kind: Literal["rotation"] = "rotation"

    model_config = ConfigDict(frozen=True)


class SmoothedGrad(BaseModel):
    """Mean gradient over ``n_copies`` parameter copies perturbed by ``N(0, noise_std^2)``."""

    kind: Literal["smoothed"] = "smoothed"
    n_copies: int = Field(default=50, ge=1)
    noise_std: float = Field(default=0.01, gt=0)

    model_config = ConfigDict(frozen=True)


EmbedStrategy = Annotated[JointPoison | LayerRotation | SmoothedGrad, Field(discriminator="kind")]


class TrainConfig(BaseModel):
    """Epochs, batch sizes, schedule and seed for pretraining and embedding."""

    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=128, ge=1)
    wm_batch_size: int = Field(default=32, ge=1)
    schedule: LrSchedule = Field(default_factory=CosineSchedule)
    weight_decay: float = Field(default=1e-4, ge=0)
    seed: int = 0

    model_config = ConfigDict(frozen=True)


class LayerRotationStep(PlainStep):
    """Plain gradients, but only layer ``groups[step % len(groups)]`` is trainable."""

    def __init__(self, groups: list[str]) -> None:
        """Initialize with the layer groups in forward order."""
        if not groups:
            raise RejectedInputError("layer rotation needs at least one group")
        self.groups = list(groups)

    def active_group(self, step: int) -> str:
        """Layer group that trains at ``step``."""
        return self.groups[step % len(self.groups)]

    def trainable(self, model: Model, step: int) -> Mapping[str, bool] | None:
        """Mask every parameter outside the active group."""
        return trainable_mask(model, [self.active_group(step)])


class SmoothedGradStep(PlainStep):
    """Average gradients taken at Gaussian-perturbed copies of the parameters.

    Copy ``c`` at step ``s`` draws its noise from sub-seed ``(seed, "smoothed", s, c)``, so the
    result does not depend on how many worker threads evaluate the copies. Gradients are
    summed in float64 in copy order.
    """

    def __init__(self, n_copies: int, noise_std: float, *, seed: int, workers: int = 1) -> None:
        """Initialize the policy."""
        self.n_copies = n_copies
        self.noise_std = noise_std
        self.seed = seed
        self.workers = workers

    def _perturbed(self, model: Model, step: int, copy: int) -> Model:
        rng = rng_for(self.seed, "smoothed", step, copy)
        noise = {k: rng.normal(0.0, self.noise_std, size=v.shape) for k, v in model.params.items()}
        return model.shifted(noise, 1.0)

    def gradients(self, model: Model, x: NDArray[np.float32], y: NDArray[np.int64], *, step: int, where: StepContext) -> tuple[float, ParamDict]:
        """Return the mean loss and mean gradient over the noised copies."""

        def one(copy: int) -> tuple[float, ParamDict]:
            return loss_and_grads(self._perturbed(model, step, copy), x, y, where=where)

        copies = range(self.n_copies)
        if self.workers > 1 and self.n_copies > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(one, copies))
        else:
            results = [one(c) for c in copies]
        total = {k: np.zeros(v.shape, dtype=np.float64) for k, v in model.params.items()}
        loss = 0.0
        for copy_loss, grads in results:
            loss += copy_loss
            for k, g in grads.items():
                total[k] += g
        return loss / self.n_copies, {k: v / self.n_copies for k, v in total.items()}


def policy_for(strategy: JointPoison | LayerRotation | SmoothedGrad, spec: ModelSpec, *, seed: int, workers: int = 1) -> StepPolicy:
    """Return the step policy implementing ``strategy``."""
    if isinstance(strategy, LayerRotation):
        return LayerRotationStep(spec.layer_groups)
    if isinstance(strategy, SmoothedGrad):
        return SmoothedGradStep(strategy.n_copies, strategy.noise_std, seed=derive_seed(seed, "smoothed"), workers=workers)
    return PlainStep()


def poisoned_steps(train_set: LabeledDataset, trigger_set: LabeledDataset, config: TrainConfig, *tags: object) -> EpochSteps:
    """Epoch-indexed steps pairing each train batch with the next trigger batch.

    Trigger batches are reshuffled per epoch and cycled when the epoch has more train
    batches than trigger batches.
    """

    def steps(epoch: int) -> Iterable[Step]:
        train = batches(train_set, config.batch_size, derive_seed(config.seed, "shuffle", *tags, "train", epoch))
        trig = batches(trigger_set, config.wm_batch_size, derive_seed(config.seed, "shuffle", *tags, "wm", epoch))
        for i, tb in enumerate(train):
            wb = trig[i % len(trig)]
            yield np.concatenate([tb.x, wb.x]), np.concatenate([tb.y, wb.y])

    return steps


def pretrain_clean(
    spec: ModelSpec,
    pretrain_set: LabeledDataset,
    config: TrainConfig,
    *,
    test_set: LabeledDataset,
    run_id: str = "clean",
    workers: int = 1,
    record_wall_time: bool = False,
) -> tuple[Model, RunTrace]:
    """Train a fresh model on clean data only.

    Raises:
        DivergedTrainingError: When training blows up (carries the epoch).
    """
    model = Model.init(spec, derive_seed(config.seed, "init"))
    trainer = Trainer(
        run_id=run_id,
        phase=Phase.PRETRAIN,
        schedule=config.schedule,
        epochs=config.epochs,
        train_set=pretrain_set,
        test_set=test_set,
        weight_decay=config.weight_decay,
        record_wall_time=record_wall_time,
        workers=workers,
    )
    return trainer.fit(model, shuffled_steps(pretrain_set, config.batch_size, config.seed, "pretrain"))


def embed(
    init: Model | ModelSpec,
    train_set: LabeledDataset,
    trigger_set: TriggerSet,
    strategy: JointPoison | LayerRotation | SmoothedGrad,
    config: TrainConfig,
    *,
    test_set: LabeledDataset,
    run_id: str = "embed",
    workers: int = 1,
    record_wall_time: bool = False,
) -> tuple[Model, RunTrace]:
    """Embed the trigger set while training on ``train_set``.

    ``init`` is either a starting model or a spec; a spec starts from the same seeded
    initialization as :func:`pretrain_clean`.

    Raises:
        RejectedInputError: If the trigger set's class count disagrees with the model.
        DivergedTrainingError: When training blows up.
    """
    model = Model.init(init, derive_seed(config.seed, "init")) if isinstance(init, ModelSpec) else init
    if trigger_set.num_classes != model.spec.num_classes:
        raise RejectedInputError(f"trigger set has {trigger_set.num_classes} classes, model has {model.spec.num_classes}")
    if len(trigger_set) == 0:
        raise RejectedInputError("cannot embed an empty trigger set")
    wm = trigger_set.as_dataset()
    trainer = Trainer(
        run_id=run_id,
        phase=Phase.EMBED,
        schedule=config.schedule,
        epochs=config.epochs,
        train_set=train_set,
        test_set=test_set,
        trigger_set=wm,
        weight_decay=config.weight_decay,
        policy=policy_for(strategy, model.spec, seed=config.seed, workers=workers),
        record_wall_time=record_wall_time,
        workers=workers,
    )
    log.info("[%s] embedding %s with %s", run_id, trigger_set.description, strategy.kind)
    return trainer.fit(model, poisoned_steps(train_set, wm, config, "embed"))


def evaluate_watermark(model: Model, trigger_set: TriggerSet, *, workers: int = 1) -> float:
    """Trigger accuracy: fraction of trigger samples predicted as their assigned label.

    Raises:
        RejectedInputError: If the trigger set is empty.
    """
    if len(trigger_set) == 0:
        raise RejectedInputError("trigger set is empty")
    return accuracy(model, trigger_set.as_dataset(), workers=workers)
