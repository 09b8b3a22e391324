"""Model container and the forward/backward passes of the fixed architectures."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from numpy.typing import DTypeLike, NDArray

from ..errors import DivergedTrainingError, RejectedInputError
from . import layers
from .spec import ModelKind, ModelSpec

log = logging.getLogger(__name__)

ParamDict = dict[str, NDArray[np.floating]]

EVAL_CHUNK = 512


@dataclass(frozen=True, slots=True)
class StepContext:
    """Where in training a computation happens; attached to divergence errors."""

    phase: str | None = None
    epoch: int | None = None
    step: int | None = None


class SupportsLabeled(Protocol):
    """Anything with aligned ``samples`` ``(N, H, W, C)`` and ``labels`` ``(N,)`` arrays."""

    @property
    def samples(self) -> NDArray[np.floating]: ...  # noqa: D102

    @property
    def labels(self) -> NDArray[np.integer]: ...  # noqa: D102


@dataclass(frozen=True, slots=True, eq=False)
class Model:
    """Network parameters plus the spec they belong to.

    Instances are treated as immutable snapshots: optimizer steps build new
    parameter arrays and a new :class:`Model`.
    """

    spec: ModelSpec
    params: ParamDict

    def __post_init__(self) -> None:
        """Validate parameter names and shapes against the spec."""
        expected = self.spec.param_shapes
        if list(self.params) != list(expected):
            raise RejectedInputError(f"parameter names {list(self.params)} do not match spec order {list(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise RejectedInputError(f"{name}: shape {self.params[name].shape} != spec {shape}")

    @classmethod
    def init(cls, spec: ModelSpec, seed: int) -> Model:
        """He-uniform weights and zero biases, drawn from ``seed``."""
        rng = np.random.default_rng(seed)
        params: ParamDict = {}
        for name, shape in spec.param_shapes.items():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape, dtype=np.float32)
                continue
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        return cls(spec, params)

    @classmethod
    def zeros(cls, spec: ModelSpec) -> Model:
        """All-zero parameters."""
        return cls(spec, {name: np.zeros(shape, dtype=np.float32) for name, shape in spec.param_shapes.items()})

    @classmethod
    def unflatten(cls, spec: ModelSpec, vector: NDArray[np.floating], *, dtype: DTypeLike = np.float32) -> Model:
        """Rebuild a model from a flat vector in the fixed parameter order."""
        return cls(spec, unflatten_params(spec, vector, dtype=dtype))

    @property
    def num_params(self) -> int:
        """Total number of scalar parameters."""
        return sum(p.size for p in self.params.values())

    def flatten(self) -> NDArray[np.floating]:
        """Concatenate all parameters in the fixed order."""
        return flatten_params(self.params)

    def astype(self, dtype: DTypeLike) -> Model:
        """Return a copy with every parameter cast to ``dtype``."""
        return Model(self.spec, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> Model:
        """Deep copy of the parameters."""
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})

    def replace(self, updates: Mapping[str, NDArray[np.floating]]) -> Model:
        """Return a model with some parameters swapped out."""
        return Model(self.spec, {k: updates.get(k, v) for k, v in self.params.items()})

    def shifted(self, direction: Mapping[str, NDArray[np.floating]], scale: float) -> Model:
        """Return ``theta + scale * direction`` in the model's dtype."""
        return Model(
            self.spec,
            {k: (v.astype(np.float64) + scale * np.asarray(direction[k], dtype=np.float64)).astype(v.dtype) for k, v in self.params.items()},
        )


def flatten_params(params: Mapping[str, NDArray[np.floating]]) -> NDArray[np.floating]:
    """Concatenate a parameter-shaped mapping into a 1-D vector (mapping order)."""
    return np.concatenate([np.ravel(v) for v in params.values()])


def unflatten_params(spec: ModelSpec, vector: NDArray[np.floating], *, dtype: DTypeLike = np.float32) -> ParamDict:
    """Split a flat vector into the spec's named parameter shapes."""
    vec = np.asarray(vector)
    total = sum(int(np.prod(s)) for s in spec.param_shapes.values())
    if vec.ndim != 1 or vec.size != total:
        raise RejectedInputError(f"vector of shape {vec.shape} cannot be unflattened into {total} parameters")
    out: ParamDict = {}
    offset = 0
    for name, shape in spec.param_shapes.items():
        size = int(np.prod(shape))
        out[name] = vec[offset : offset + size].reshape(shape).astype(dtype)
        offset += size
    return out


# ---------- forward / backward ----------


def _check_batch(spec: ModelSpec, batch: NDArray[np.floating]) -> None:
    if batch.ndim != 4 or tuple(batch.shape[1:]) != spec.input_shape:
        raise RejectedInputError(f"batch shape {batch.shape} does not match input shape (N, {', '.join(map(str, spec.input_shape))})")


def _forward(model: Model, x: NDArray[np.floating]) -> tuple[NDArray[np.floating], list[tuple[str, object]]]:
    p = model.params
    x = x.astype(next(iter(p.values())).dtype, copy=False)
    tape: list[tuple[str, object]] = []
    if model.spec.kind is ModelKind.MLP:
        h = x.reshape(x.shape[0], -1)
        for i in range(len(model.spec.widths)):
            z = layers.dense_forward(h, p[f"dense{i}.weight"], p[f"dense{i}.bias"])
            tape.append((f"dense{i}", (h, z)))
            h = np.maximum(z, 0)
    else:
        h = x
        for i in range(len(model.spec.widths)):
            z, cols = layers.conv_forward(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
            tape.append((f"conv{i}", (h.shape, cols, z)))
            h = np.maximum(z, 0)
        pooled, idx = layers.maxpool_forward(h)
        tape.append(("pool", (h.shape, idx)))
        h = pooled.reshape(pooled.shape[0], -1)
    logits = layers.dense_forward(h, p["logits.weight"], p["logits.bias"])
    tape.append(("logits", (h,)))
    return logits, tape


def _backward(model: Model, tape: list[tuple[str, object]], dlogits: NDArray[np.floating]) -> tuple[ParamDict, NDArray[np.floating]]:
    p = model.params
    grads: ParamDict = {}
    dout = dlogits
    for layer, saved in reversed(tape):
        if layer == "logits":
            (h,) = saved  # type: ignore[misc]
            dout, grads["logits.weight"], grads["logits.bias"] = layers.dense_backward(dout, h, p["logits.weight"])
        elif layer == "pool":
            relu_shape, idx = saved  # type: ignore[misc]
            dout = layers.maxpool_backward(dout.reshape(relu_shape[0], *model.spec.pooled_shape), idx, relu_shape)
        elif layer.startswith("dense"):
            h, z = saved  # type: ignore[misc]
            dz = layers.relu_backward(dout, z)
            dout, grads[f"{layer}.weight"], grads[f"{layer}.bias"] = layers.dense_backward(dz, h, p[f"{layer}.weight"])
        else:
            in_shape, cols, z = saved  # type: ignore[misc]
            dz = layers.relu_backward(dout, z)
            dout, grads[f"{layer}.weight"], grads[f"{layer}.bias"] = layers.conv_backward(dz, cols, in_shape, p[f"{layer}.weight"])
    ordered = {name: grads[name] for name in model.params}
    return ordered, dout.reshape(dlogits.shape[0], *model.spec.input_shape)


def forward(model: Model, batch: NDArray[np.floating], *, where: StepContext | None = None) -> NDArray[np.floating]:
    """Compute logits ``(N, K)`` for a batch ``(N, H, W, C)``.

    Raises:
        RejectedInputError: If the batch shape does not match the spec.
        DivergedTrainingError: If any logit is not finite.
    """
    _check_batch(model.spec, batch)
    logits, _ = _forward(model, batch)
    if not np.all(np.isfinite(logits)):
        ctx = where or StepContext()
        raise DivergedTrainingError("non-finite logits", phase=ctx.phase, epoch=ctx.epoch, step=ctx.step)
    return logits


def _check_labels(model: Model, labels: NDArray[np.integer], n: int) -> NDArray[np.intp]:
    y = np.asarray(labels).astype(np.intp)
    if y.shape != (n,):
        raise RejectedInputError(f"expected {n} labels, got shape {y.shape}")
    if n and (y.min() < 0 or y.max() >= model.spec.num_classes):
        raise RejectedInputError(f"labels must lie in [0, {model.spec.num_classes})")
    return y


def loss_and_grads(
    model: Model,
    batch: NDArray[np.floating],
    labels: NDArray[np.integer],
    *,
    where: StepContext | None = None,
) -> tuple[float, ParamDict]:
    """Mean softmax cross-entropy over the batch and its parameter gradients.

    Raises:
        RejectedInputError: On shape or label-range violations.
        DivergedTrainingError: If the loss is not finite.
    """
    _check_batch(model.spec, batch)
    y = _check_labels(model, labels, batch.shape[0])
    logits, tape = _forward(model, batch)
    loss, dlogits = layers.softmax_cross_entropy(logits, y)
    if not np.isfinite(loss):
        ctx = where or StepContext()
        raise DivergedTrainingError("non-finite loss", phase=ctx.phase, epoch=ctx.epoch, step=ctx.step)
    grads, _ = _backward(model, tape, dlogits)
    return loss, grads


def input_gradients(model: Model, x: NDArray[np.floating], labels: NDArray[np.integer]) -> NDArray[np.floating]:
    """Per-sample ``dL_i/dx_i`` for a batch, where ``L_i`` is the sample's own cross-entropy."""
    _check_batch(model.spec, x)
    y = _check_labels(model, labels, x.shape[0])
    logits, tape = _forward(model, x)
    loss, dlogits = layers.softmax_cross_entropy(logits, y, reduction="sum")
    if not np.isfinite(loss):
        raise DivergedTrainingError("non-finite loss while differentiating inputs")
    _, dx = _backward(model, tape, dlogits)
    return dx


def input_gradient(model: Model, x: NDArray[np.floating], label: int) -> NDArray[np.floating]:
    """``dL/dx`` for a single sample ``(H, W, C)``."""
    return input_gradients(model, x[None, ...], np.array([label]))[0]


def _chunks(n: int, size: int) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def predict_batch(model: Model, x: NDArray[np.floating], *, workers: int = 1) -> NDArray[np.intp]:
    """Argmax class per sample (ties go to the lowest class index).

    Chunks may be evaluated on ``workers`` threads; results are assembled by chunk index.
    """
    _check_batch(model.spec, x)
    parts = _chunks(x.shape[0], EVAL_CHUNK)

    def _one(sl: slice) -> NDArray[np.intp]:
        return np.argmax(_forward(model, x[sl])[0], axis=1)

    if workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_one, parts))
    else:
        outs = [_one(sl) for sl in parts]
    return np.concatenate(outs) if outs else np.zeros(0, dtype=np.intp)


def predict(model: Model, x: NDArray[np.floating]) -> int:
    """Class id for a single sample ``(H, W, C)``."""
    return int(predict_batch(model, x[None, ...])[0])


def accuracy(model: Model, dataset: SupportsLabeled, *, workers: int = 1) -> float:
    """Fraction of samples whose prediction equals the label.

    Raises:
        RejectedInputError: If the dataset is empty.
    """
    if len(dataset.labels) == 0:
        raise RejectedInputError("accuracy of an empty dataset is undefined")
    preds = predict_batch(model, dataset.samples, workers=workers)
    return float(np.mean(preds == np.asarray(dataset.labels)))


def mean_loss(model: Model, dataset: SupportsLabeled) -> float:
    """Mean cross-entropy over a dataset, accumulated in float64."""
    if len(dataset.labels) == 0:
        raise RejectedInputError("loss of an empty dataset is undefined")
    _check_batch(model.spec, dataset.samples)
    y = _check_labels(model, dataset.labels, len(dataset.labels))
    total = 0.0
    for sl in _chunks(len(y), EVAL_CHUNK):
        logits, _ = _forward(model, dataset.samples[sl])
        total += float(layers.per_sample_cross_entropy(logits, y[sl]).sum())
    return total / len(y)


def preactivation_margin(model: Model, batch: NDArray[np.floating]) -> float:
    """Smallest |pre-activation| over all ReLU units for ``batch``.

    Finite differences are only meaningful when this margin exceeds the step size.
    """
    _, tape = _forward(model, batch)
    margins: list[float] = []
    for layer, saved in tape:
        if layer.startswith("dense"):
            margins.append(float(np.abs(saved[1]).min()))  # type: ignore[index]
        elif layer.startswith("conv"):
            margins.append(float(np.abs(saved[2]).min()))  # type: ignore[index]
    return min(margins) if margins else float("inf")


def activation_pattern(model: Model, batch: NDArray[np.floating]) -> list[NDArray[np.generic]]:
    """ReLU on/off masks and max-pool winners for ``batch``, in forward order.

    Along any parameter or input change that leaves the pattern fixed, the logits are smooth.
    """
    _check_batch(model.spec, batch)
    _, tape = _forward(model, batch)
    out: list[NDArray[np.generic]] = []
    for layer, saved in tape:
        if layer.startswith("dense"):
            out.append(saved[1] > 0)  # type: ignore[index]
        elif layer.startswith("conv"):
            out.append(saved[2] > 0)  # type: ignore[index]
        elif layer == "pool":
            out.append(saved[1])  # type: ignore[index]
    return out


def trainable_mask(model: Model, groups: Iterable[str]) -> dict[str, bool]:
    """Map parameter name to whether its layer is in ``groups``."""
    wanted = set(groups)
    return {name: name.split(".", 1)[0] in wanted for name in model.params}
