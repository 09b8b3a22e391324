"""Removal attacks: fine-tuning all layers and hard-label model extraction."""

from __future__ import annotations

import logging
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .data import LabeledDataset
from .errors import RejectedInputError
from .models.trace import Phase, RunTrace
from .nn import ConstantSchedule, CosineSchedule, LrSchedule, Model, ModelSpec, predict_batch
from .training import Trainer, shuffled_steps
from .triggers import TriggerSet
from .utils import derive_seed

log = logging.getLogger(__name__)


class FinetuneAttack(BaseModel):
    """Constant-lr Adam on the attacker's fine-tune split, every layer trainable."""

    kind: Literal["finetune"] = "finetune"
    lr: float = Field(default=1e-4, ge=0)
    epochs: int = Field(default=50, ge=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    batch_size: int = Field(default=128, ge=1)
    seed: int = 0

    model_config = ConfigDict(frozen=True)


class ExtractAttack(BaseModel):
    """Fresh surrogate trained on the victim's hard labels."""

    kind: Literal["extract"] = "extract"
    surrogate: ModelSpec | None = None
    schedule: LrSchedule = Field(default_factory=CosineSchedule)
    epochs: int = Field(default=50, ge=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    batch_size: int = Field(default=128, ge=1)
    query_budget: int | None = Field(default=None, ge=1)
    seed: int = 0

    model_config = ConfigDict(frozen=True)


AttackConfig = Annotated[FinetuneAttack | ExtractAttack, Field(discriminator="kind")]


def finetune(
    model: Model,
    finetune_set: LabeledDataset,
    config: FinetuneAttack,
    *,
    test_set: LabeledDataset,
    trigger_set: TriggerSet | None = None,
    run_id: str = "finetune",
    phase: Phase = Phase.FINETUNE,
    keep_snapshots: bool = False,
    workers: int = 1,
    record_wall_time: bool = False,
) -> tuple[Model, RunTrace]:
    """Fine-tune every parameter at a constant learning rate.

    With ``lr = 0`` the parameters are returned unchanged (decay is scaled by lr).

    Raises:
        DivergedTrainingError: When training blows up.
    """
    trainer = Trainer(
        run_id=run_id,
        phase=phase,
        schedule=ConstantSchedule(lr=config.lr),
        epochs=config.epochs,
        train_set=finetune_set,
        test_set=test_set,
        trigger_set=trigger_set.as_dataset() if trigger_set is not None else None,
        weight_decay=config.weight_decay,
        keep_snapshots=keep_snapshots,
        record_wall_time=record_wall_time,
        workers=workers,
    )
    return trainer.fit(model, shuffled_steps(finetune_set, config.batch_size, config.seed, str(phase), run_id))


def extraction_queries(victim: Model, train_set: LabeledDataset, *, budget: int | None, seed: int, workers: int = 1) -> LabeledDataset:
    """Relabel (a seeded subset of) ``train_set`` with the victim's argmax predictions."""
    queries = train_set
    if budget is not None and budget < len(train_set):
        pick = np.sort(np.random.default_rng(derive_seed(seed, "extract", "queries")).choice(len(train_set), size=budget, replace=False))
        queries = train_set.subset(pick)
    labels = predict_batch(victim, queries.samples, workers=workers)
    return queries.relabeled(labels, name="extraction_queries")


def agreement(a: Model, b: Model, dataset: LabeledDataset, *, workers: int = 1) -> float:
    """Fraction of samples on which two models predict the same class."""
    if len(dataset) == 0:
        raise RejectedInputError("agreement on an empty dataset is undefined")
    pa = predict_batch(a, dataset.samples, workers=workers)
    pb = predict_batch(b, dataset.samples, workers=workers)
    return float(np.mean(pa == pb))


def extract(
    victim: Model,
    surrogate_spec: ModelSpec | None,
    train_set: LabeledDataset,
    config: ExtractAttack,
    *,
    test_set: LabeledDataset,
    trigger_set: TriggerSet | None = None,
    run_id: str = "extract",
    keep_snapshots: bool = False,
    workers: int = 1,
    record_wall_time: bool = False,
) -> tuple[Model, RunTrace]:
    """Train a fresh surrogate on ``(x, predict(victim, x))``; the victim is not modified.

    Every trace row carries the surrogate's agreement with the victim on ``test_set``.

    Raises:
        RejectedInputError: If victim and surrogate disagree on input shape or class count.
        DivergedTrainingError: When training blows up.
    """
    spec = surrogate_spec or config.surrogate or victim.spec
    if spec.input_shape != victim.spec.input_shape or spec.num_classes != victim.spec.num_classes:
        raise RejectedInputError("surrogate must share the victim's input shape and class count")
    queries = extraction_queries(victim, train_set, budget=config.query_budget, seed=config.seed, workers=workers)
    surrogate = Model.init(spec, derive_seed(config.seed, "init", "surrogate"))
    trainer = Trainer(
        run_id=run_id,
        phase=Phase.EXTRACT,
        schedule=config.schedule,
        epochs=config.epochs,
        train_set=queries,
        test_set=test_set,
        trigger_set=trigger_set.as_dataset() if trigger_set is not None else None,
        weight_decay=config.weight_decay,
        keep_snapshots=keep_snapshots,
        record_wall_time=record_wall_time,
        workers=workers,
        reference_labels=predict_batch(victim, test_set.samples, workers=workers),
    )
    log.info("[%s] extracting %s surrogate from %d hard-label queries", run_id, spec.kind, len(queries))
    return trainer.fit(surrogate, shuffled_steps(queries, config.batch_size, config.seed, "extract"))
