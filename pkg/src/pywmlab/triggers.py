"""Trigger-set generation and labeling.

Four trigger families are supported:

- ``noise``: Gaussian noise added to trigger-base samples.
- ``content``: a bright square stamped at a fixed position.
- ``unrelated``: samples drawn from an out-of-distribution source.
- ``fgsm``: one-step adversarial perturbation against a clean model.

Labels follow either a single target class or the shifted multi-label rule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter

from .data import LabeledDataset
from .errors import FormatError, RejectedInputError
from .nn import Model, input_gradients, predict_batch
from .nn.checkpoint import read_tensors, sidecar_path, write_tensors
from .utils import derive_seed, load_json_payload, save_json_payload

log = logging.getLogger(__name__)

TRIGGER_SET_SIZE = 200
FGSM_CHUNK = 256


class NoiseTrigger(BaseModel):
    """``x' = clip(x + eta, 0, 1)`` with ``eta ~ N(0, strength^2)``."""

    kind: Literal["noise"] = "noise"
    strength: float = Field(default=0.15, gt=0)

    model_config = ConfigDict(frozen=True)


class ContentTrigger(BaseModel):
    """A ``patch_size`` square of ``value`` stamped at ``(row, col)``."""

    kind: Literal["content"] = "content"
    patch_size: int = Field(default=6, ge=1)
    value: float = Field(default=1.0, gt=0, le=1)
    row: int = Field(default=0, ge=0)
    col: int = Field(default=0, ge=0)

    model_config = ConfigDict(frozen=True)


class UnrelatedTrigger(BaseModel):
    """Seeded draws from an out-of-distribution source, resized to the input shape."""

    kind: Literal["unrelated"] = "unrelated"
    source: str = "ood"

    model_config = ConfigDict(frozen=True)


class FgsmTrigger(BaseModel):
    """``x' = clip(x + epsilon * sign(dL/dx), 0, 1)`` against a clean model."""

    kind: Literal["fgsm"] = "fgsm"
    epsilon: float = Field(default=0.1, gt=0, le=0.5)

    model_config = ConfigDict(frozen=True)


TriggerType = Annotated[NoiseTrigger | ContentTrigger | UnrelatedTrigger | FgsmTrigger, Field(discriminator="kind")]


class SingleLabel(BaseModel):
    """Every trigger sample gets ``target``."""

    kind: Literal["single"] = "single"
    target: int = Field(default=0, ge=0)

    model_config = ConfigDict(frozen=True)


class MultiLabel(BaseModel):
    """Shifted labels ``(y + 1) mod K``; FGSM triggers draw from classes other than ``y`` and ``y_adv``."""

    kind: Literal["multi"] = "multi"

    model_config = ConfigDict(frozen=True)


LabelScheme = Annotated[SingleLabel | MultiLabel, Field(discriminator="kind")]

_TRIGGER_ADAPTER: TypeAdapter[NoiseTrigger | ContentTrigger | UnrelatedTrigger | FgsmTrigger] = TypeAdapter(TriggerType)
_SCHEME_ADAPTER: TypeAdapter[SingleLabel | MultiLabel] = TypeAdapter(LabelScheme)


@dataclass(frozen=True, slots=True, eq=False)
class GeneratedTriggers:
    """Unlabeled trigger samples with their source labels (and ``y_adv`` for FGSM)."""

    samples: NDArray[np.float32]
    original_labels: NDArray[np.int64]
    adversarial_labels: NDArray[np.int64] | None = None


@dataclass(frozen=True, slots=True, eq=False)
class TriggerSet:
    """Labeled trigger samples plus how they were made."""

    samples: NDArray[np.float32]
    labels: NDArray[np.int64]
    original_labels: NDArray[np.int64]
    trigger: NoiseTrigger | ContentTrigger | UnrelatedTrigger | FgsmTrigger
    scheme: SingleLabel | MultiLabel
    seed: int
    num_classes: int
    adversarial_labels: NDArray[np.int64] | None = None

    def __post_init__(self) -> None:
        """Check sizes and ranges."""
        n = self.samples.shape[0]
        if self.labels.shape != (n,) or self.original_labels.shape != (n,):
            raise RejectedInputError(f"trigger set labels do not match {n} samples")
        if self.adversarial_labels is not None and self.adversarial_labels.shape != (n,):
            raise RejectedInputError("adversarial labels do not match the samples")
        if n and (self.samples.min() < 0 or self.samples.max() > 1):
            raise RejectedInputError("trigger samples must lie in [0, 1]")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise RejectedInputError(f"trigger labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        """Number of trigger samples."""
        return int(self.labels.shape[0])

    @property
    def description(self) -> str:
        """Short tag such as ``noise/single``."""
        return f"{self.trigger.kind}/{self.scheme.kind}"

    def as_dataset(self) -> LabeledDataset:
        """View the trigger set as a labeled dataset (for training and evaluation)."""
        return LabeledDataset.from_arrays(
            self.samples, self.labels, self.num_classes, name="trigger_set", provenance=f"trigger:{self.description}:seed={self.seed}"
        )


def resize_nearest(samples: NDArray[np.floating], shape: tuple[int, int, int]) -> NDArray[np.float32]:
    """Nearest-neighbour resize of ``(N, h, w, c)`` images to ``(N, H, W, C)``.

    Channel counts are reconciled by repeating a single channel or averaging down to one.
    """
    h_dst, w_dst, c_dst = shape
    _, h_src, w_src, c_src = samples.shape
    rows = np.minimum(((np.arange(h_dst) + 0.5) * h_src / h_dst).astype(np.intp), h_src - 1)
    cols = np.minimum(((np.arange(w_dst) + 0.5) * w_src / w_dst).astype(np.intp), w_src - 1)
    out = samples[:, rows][:, :, cols]
    if c_src != c_dst:
        if c_src == 1:
            out = np.repeat(out, c_dst, axis=3)
        elif c_dst == 1:
            out = out.mean(axis=3, keepdims=True)
        else:
            raise RejectedInputError(f"cannot map {c_src} channels to {c_dst}")
    return np.ascontiguousarray(out, dtype=np.float32)


def generate(
    trigger: NoiseTrigger | ContentTrigger | UnrelatedTrigger | FgsmTrigger,
    base: LabeledDataset,
    *,
    seed: int,
    clean_model: Model | None = None,
    count: int = TRIGGER_SET_SIZE,
    input_shape: tuple[int, int, int] | None = None,
) -> GeneratedTriggers:
    """Create unlabeled trigger samples.

    Args:
        trigger: Trigger family and its parameters.
        base: The trigger-base split, or the out-of-distribution source for ``unrelated``.
        seed: Generation seed.
        clean_model: Clean pretrained model; required for ``fgsm``.
        count: Number of draws for ``unrelated`` (other families use every base sample).
        input_shape: Target shape for ``unrelated`` resizing; defaults to the base shape.

    Raises:
        RejectedInputError: On a missing clean model, a patch that does not fit or a source
            too small for ``count`` draws.
    """
    rng = np.random.default_rng(seed)
    x = base.samples
    y = base.labels
    if isinstance(trigger, NoiseTrigger):
        noise = rng.normal(0.0, trigger.strength, size=x.shape)
        return GeneratedTriggers(np.clip(x + noise, 0.0, 1.0).astype(np.float32), y.copy())

    if isinstance(trigger, ContentTrigger):
        h, w, _ = base.input_shape
        if trigger.row + trigger.patch_size > h or trigger.col + trigger.patch_size > w:
            raise RejectedInputError(f"{trigger.patch_size}x{trigger.patch_size} patch at ({trigger.row}, {trigger.col}) does not fit {h}x{w}")
        out = x.copy()
        out[:, trigger.row : trigger.row + trigger.patch_size, trigger.col : trigger.col + trigger.patch_size, :] = trigger.value
        return GeneratedTriggers(out, y.copy())

    if isinstance(trigger, UnrelatedTrigger):
        if len(base) < count:
            raise RejectedInputError(f"source {base.name!r} has {len(base)} samples, need {count}")
        pick = np.sort(rng.choice(len(base), size=count, replace=False))
        target_shape = input_shape or base.input_shape
        return GeneratedTriggers(resize_nearest(x[pick], target_shape), y[pick].copy())

    if clean_model is None:
        raise RejectedInputError("fgsm triggers need a clean pretrained model")
    perturbed = np.empty_like(x)
    for start in range(0, len(base), FGSM_CHUNK):
        sl = slice(start, start + FGSM_CHUNK)
        grad = input_gradients(clean_model, x[sl], y[sl])
        stepped = x[sl].astype(np.float64) + trigger.epsilon * np.sign(grad.astype(np.float64))
        perturbed[sl] = np.clip(stepped, 0.0, 1.0)
    y_adv = predict_batch(clean_model, perturbed).astype(np.int64)
    flipped = float(np.mean(y_adv != y)) if len(y) else 0.0
    log.info("fgsm eps=%.3f flipped %.1f%% of %d predictions", trigger.epsilon, 100 * flipped, len(y))
    return GeneratedTriggers(perturbed, y.copy(), y_adv)


def assign_labels(
    original_labels: NDArray[np.integer],
    scheme: SingleLabel | MultiLabel,
    *,
    num_classes: int,
    seed: int,
    adversarial_labels: NDArray[np.integer] | None = None,
) -> NDArray[np.int64]:
    """Label trigger samples under ``scheme``.

    - single: every label is ``target``.
    - multi without ``adversarial_labels``: ``(y + 1) mod K``.
    - multi with ``adversarial_labels`` (FGSM): a seeded uniform draw from
      ``{0..K-1} - {y, y_adv}``.

    Raises:
        RejectedInputError: If the target is out of range or a choice set is empty.
    """
    y = np.asarray(original_labels, dtype=np.int64) % num_classes
    if isinstance(scheme, SingleLabel):
        if scheme.target >= num_classes:
            raise RejectedInputError(f"target class {scheme.target} out of range for {num_classes} classes")
        return np.full(y.shape, scheme.target, dtype=np.int64)
    if adversarial_labels is None:
        return (y + 1) % num_classes
    y_adv = np.asarray(adversarial_labels, dtype=np.int64)
    if y_adv.shape != y.shape:
        raise RejectedInputError("adversarial labels do not match original labels")
    rng = np.random.default_rng(seed)
    classes = np.arange(num_classes)
    out = np.empty_like(y)
    for i, (yi, ai) in enumerate(zip(y, y_adv, strict=True)):
        choices = classes[(classes != yi) & (classes != ai)]
        if choices.size == 0:
            raise RejectedInputError(f"sample {i}: no class left besides y={yi} and y_adv={ai} with K={num_classes}")
        out[i] = choices[rng.integers(choices.size)]
    return out


def make_trigger_set(
    trigger: NoiseTrigger | ContentTrigger | UnrelatedTrigger | FgsmTrigger,
    scheme: SingleLabel | MultiLabel,
    base: LabeledDataset,
    *,
    num_classes: int,
    seed: int,
    clean_model: Model | None = None,
    count: int = TRIGGER_SET_SIZE,
    input_shape: tuple[int, int, int] | None = None,
) -> TriggerSet:
    """Generate and label a trigger set; sub-seeds derive from ``seed``."""
    gen = generate(
        trigger,
        base,
        seed=derive_seed(seed, "triggers", trigger.kind),
        clean_model=clean_model,
        count=count,
        input_shape=input_shape,
    )
    labels = assign_labels(
        gen.original_labels,
        scheme,
        num_classes=num_classes,
        seed=derive_seed(seed, "triggers", "labels"),
        adversarial_labels=gen.adversarial_labels,
    )
    ts = TriggerSet(
        samples=gen.samples,
        labels=labels,
        original_labels=gen.original_labels % num_classes,
        trigger=trigger,
        scheme=scheme,
        seed=seed,
        num_classes=num_classes,
        adversarial_labels=gen.adversarial_labels,
    )
    log.info("trigger set %s: %d samples", ts.description, len(ts))
    return ts


def save_trigger_set(ts: TriggerSet, path: str | Path) -> Path:
    """Write a trigger set as a tensor container plus JSON sidecar."""
    tensors: dict[str, NDArray[np.floating]] = {
        "samples": ts.samples,
        "labels": ts.labels.astype(np.float32),
        "original_labels": ts.original_labels.astype(np.float32),
    }
    if ts.adversarial_labels is not None:
        tensors["adversarial_labels"] = ts.adversarial_labels.astype(np.float32)
    p = write_tensors(path, tensors)
    save_json_payload(
        {
            "trigger": ts.trigger.model_dump(mode="json"),
            "scheme": ts.scheme.model_dump(mode="json"),
            "seed": ts.seed,
            "num_classes": ts.num_classes,
            "count": len(ts),
        },
        sidecar_path(p),
    )
    return p


def load_trigger_set(path: str | Path) -> TriggerSet:
    """Read a trigger set written by :func:`save_trigger_set`.

    Raises:
        FormatError: If tensors or the sidecar are missing or malformed.
    """
    tensors = read_tensors(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError("sidecar", f"{side} is missing")
    meta = load_json_payload(side)
    for key in ("samples", "labels", "original_labels"):
        if key not in tensors:
            raise FormatError("name", f"tensor {key!r} missing from {path}")
    adv = tensors.get("adversarial_labels")
    return TriggerSet(
        samples=tensors["samples"],
        labels=tensors["labels"].astype(np.int64),
        original_labels=tensors["original_labels"].astype(np.int64),
        trigger=_TRIGGER_ADAPTER.validate_python(meta["trigger"]),
        scheme=_SCHEME_ADAPTER.validate_python(meta["scheme"]),
        seed=int(meta["seed"]),
        num_classes=int(meta["num_classes"]),
        adversarial_labels=None if adv is None else adv.astype(np.int64),
    )
