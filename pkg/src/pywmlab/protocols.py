"""Owner-side procedures: clean-data restoration, blended fine-tuning and ownership verification."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Iterable
from enum import StrEnum
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import binom

from .data import LabeledDataset
from .errors import RejectedInputError, TriggerExposureError
from .models.results import VerifyResult
from .models.trace import Phase, RunTrace
from .nn import ConstantSchedule, Model, predict_batch
from .training import EpochSteps, Step, Trainer, shuffled_steps
from .triggers import TriggerSet
from .utils import derive_seed, log_json_payload

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 1e-6


class LrTier(StrEnum):
    """Fine-tune attack strength."""

    SMALL = "small"
    MED = "med"
    BIG = "big"


FINETUNE_LR: dict[LrTier, float] = {LrTier.SMALL: 1e-4, LrTier.MED: 5e-4, LrTier.BIG: 1e-3}
RESTORE_LR: dict[LrTier, float] = {LrTier.SMALL: 1e-4, LrTier.MED: 2e-4, LrTier.BIG: 2e-4}


def _tier(tier: LrTier | str) -> LrTier:
    try:
        return LrTier(str(tier).strip().lower())
    except ValueError:
        raise RejectedInputError(f"Unsupported lr tier: {tier!r}") from None


def attack_lr_for(tier: LrTier | str) -> float:
    """Fine-tune attack learning rate for a tier (``small``/``med``/``big``).

    Raises:
        RejectedInputError: If the tier is unknown.
    """
    return FINETUNE_LR[_tier(tier)]


def restore_lr_for(tier: LrTier | str) -> float:
    """Retraining learning rate paired with an attack tier.

    Raises:
        RejectedInputError: If the tier is unknown.
    """
    return RESTORE_LR[_tier(tier)]


class RestoreConfig(BaseModel):
    """Clean retraining after an attack."""

    lr: float = Field(default=1e-4, gt=0)
    epochs: int = Field(default=30, ge=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    batch_size: int = Field(default=128, ge=1)
    seed: int = 0

    model_config = ConfigDict(frozen=True)

    @classmethod
    def for_tier(cls, tier: LrTier | str, **kwargs: object) -> RestoreConfig:
        """Config whose lr matches the attack tier being undone."""
        return cls(lr=restore_lr_for(tier), **kwargs)  # type: ignore[arg-type]


class BlendConfig(BaseModel):
    """Fine-tuning with one clean-training batch mixed in after every ``mix_interval`` fine-tune batches."""

    train_batch: int = Field(default=128, ge=1)
    finetune_batch: int = Field(default=128, ge=1)
    mix_interval: int = Field(default=2, ge=1)
    epochs: int = Field(default=50, ge=1)
    lr: float = Field(default=5e-4, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)
    seed: int = 0

    model_config = ConfigDict(frozen=True)


class TriggerSecrecyGuard:
    """Raises when a training batch contains a trigger sample (compared by exact row bytes)."""

    def __init__(self, trigger_set: TriggerSet | None) -> None:
        """Fingerprint every trigger sample."""
        self._digests: set[bytes] = set()
        self.checked_batches = 0
        if trigger_set is not None:
            self._digests = {self._digest(row) for row in trigger_set.samples}

    @staticmethod
    def _digest(row: NDArray[np.floating]) -> bytes:
        return hashlib.blake2b(np.ascontiguousarray(row, dtype=np.float32).tobytes(), digest_size=16).digest()

    def __call__(self, batch: NDArray[np.floating]) -> None:
        """Check one batch.

        Raises:
            TriggerExposureError: If any row equals a trigger sample.
        """
        self.checked_batches += 1
        if not self._digests:
            return
        for i, row in enumerate(batch):
            if self._digest(row) in self._digests:
                raise TriggerExposureError(f"trigger sample reached a training batch (row {i} of batch {self.checked_batches})")


def restore(
    model: Model,
    train_set: LabeledDataset,
    config: RestoreConfig,
    trigger_set: TriggerSet,
    *,
    test_set: LabeledDataset,
    run_id: str = "retrain",
    keep_snapshots: bool = False,
    workers: int = 1,
    record_wall_time: bool = False,
) -> tuple[Model, RunTrace]:
    """Retrain on clean training data only; trigger accuracy is evaluated, never trained on.

    Raises:
        TriggerExposureError: If a trigger sample appears in a training batch.
        DivergedTrainingError: When training blows up.
    """
    trainer = Trainer(
        run_id=run_id,
        phase=Phase.RETRAIN,
        schedule=ConstantSchedule(lr=config.lr),
        epochs=config.epochs,
        train_set=train_set,
        test_set=test_set,
        trigger_set=trigger_set.as_dataset(),
        weight_decay=config.weight_decay,
        guard=TriggerSecrecyGuard(trigger_set),
        keep_snapshots=keep_snapshots,
        record_wall_time=record_wall_time,
        workers=workers,
    )
    return trainer.fit(model, shuffled_steps(train_set, config.batch_size, config.seed, "retrain", run_id))


BatchKind = Literal["finetune", "train"]


def blend_schedule(num_batch: int, mix_interval: int) -> list[tuple[BatchKind, int]]:
    """Batch kinds of one blended epoch, in order, as 0-based batch indices.

    Batches are counted from 1 for both sets: fine-tune batch ``i`` (``i = 1..num_batch``) is
    followed, when ``i mod M == 0``, by train batch ``i / M``. Train batches are therefore
    consumed in order starting with the first one, one per ``M`` fine-tune batches, and the
    index never wraps.

    Example:
        >>> blend_schedule(5, 2)
        [('finetune', 0), ('finetune', 1), ('train', 0), ('finetune', 2), ('finetune', 3), ('train', 1), ('finetune', 4)]
    """
    if num_batch < 0 or mix_interval < 1:
        raise RejectedInputError(f"invalid blend schedule ({num_batch=}, {mix_interval=})")
    out: list[tuple[BatchKind, int]] = []
    for i in range(1, num_batch + 1):
        out.append(("finetune", i - 1))
        if i % mix_interval == 0:
            out.append(("train", i // mix_interval - 1))
    return out


def blended_steps(train_set: LabeledDataset, finetune_set: LabeledDataset, config: BlendConfig, *tags: object) -> EpochSteps:
    """Epoch-indexed steps following :func:`blend_schedule` with per-epoch reshuffles of both sets.

    The last fine-tune batch may be short. A train batch whose index runs past the train set
    is skipped with a warning.
    """
    if len(finetune_set) == 0:
        raise RejectedInputError("blended fine-tuning needs a non-empty fine-tune set")
    num_batch = -(-len(finetune_set) // config.finetune_batch)

    def steps(epoch: int) -> Iterable[Step]:
        ft_order = np.random.default_rng(derive_seed(config.seed, "shuffle", *tags, "finetune", epoch)).permutation(len(finetune_set))
        tr_order = np.random.default_rng(derive_seed(config.seed, "shuffle", *tags, "train", epoch)).permutation(len(train_set))
        for kind, j in blend_schedule(num_batch, config.mix_interval):
            if kind == "finetune":
                rows = ft_order[j * config.finetune_batch : (j + 1) * config.finetune_batch]
                yield finetune_set.samples[rows], finetune_set.labels[rows]
                continue
            rows = tr_order[j * config.train_batch : (j + 1) * config.train_batch]
            if rows.size == 0:
                log.warning("blend epoch %d: train batch %d is past the end of %d train samples; skipped", epoch, j, len(train_set))
                continue
            yield train_set.samples[rows], train_set.labels[rows]

    return steps


def blended_finetune(
    model: Model,
    train_set: LabeledDataset,
    finetune_set: LabeledDataset,
    config: BlendConfig,
    *,
    test_set: LabeledDataset,
    trigger_set: TriggerSet,
    run_id: str = "blend",
    workers: int = 1,
    record_wall_time: bool = False,
) -> tuple[Model, RunTrace]:
    """Fine-tune with clean training batches interleaved.

    Raises:
        TriggerExposureError: If a trigger sample appears in a training batch.
        RejectedInputError: If the fine-tune set is empty.
    """
    trainer = Trainer(
        run_id=run_id,
        phase=Phase.BLEND,
        schedule=ConstantSchedule(lr=config.lr),
        epochs=config.epochs,
        train_set=finetune_set,
        test_set=test_set,
        trigger_set=trigger_set.as_dataset(),
        weight_decay=config.weight_decay,
        guard=TriggerSecrecyGuard(trigger_set),
        record_wall_time=record_wall_time,
        workers=workers,
    )
    return trainer.fit(model, blended_steps(train_set, finetune_set, config, "blend", run_id))


def binomial_tail(k: int, n: int, p0: float) -> float:
    """One-sided tail ``P[X >= k]`` for ``X ~ Binomial(n, p0)``."""
    if k <= 0:
        return 1.0
    return float(min(max(binom.sf(k - 1, n, p0), 0.0), 1.0))


def verify_ownership(
    model: Model,
    trigger_set: TriggerSet,
    alpha: float = DEFAULT_ALPHA,
    restore_trace: RunTrace | None = None,
    *,
    workers: int = 1,
) -> VerifyResult:
    """Decide whether ``model`` carries the watermark of ``trigger_set``.

    The statistic is the number of trigger hits against chance ``1/K``; the model is
    declared watermarked when the binomial tail falls below ``alpha``.

    Raises:
        RejectedInputError: If ``alpha`` is outside ``(0, 1)`` or the trigger set is empty.
    """
    if not 0 < alpha < 1:
        raise RejectedInputError(f"alpha must lie in (0, 1), got {alpha}")
    if len(trigger_set) == 0:
        raise RejectedInputError("trigger set is empty")

    hits = int(np.sum(predict_batch(model, trigger_set.samples, workers=workers) == trigger_set.labels))
    n = len(trigger_set)
    chance = 1.0 / trigger_set.num_classes
    p_value = binomial_tail(hits, n, chance)
    result = VerifyResult(
        trigger_acc=hits / n,
        hits=hits,
        n=n,
        chance=chance,
        p_value=p_value,
        alpha=alpha,
        watermarked=p_value < alpha,
        restoration_gain=restore_trace.restoration_gain() if restore_trace is not None else None,
    )
    log_json_payload(log, "verify", result.model_dump(mode="json"))
    return result
