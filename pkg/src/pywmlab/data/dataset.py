"""Labeled image dataset container and deterministic batching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ..errors import RejectedInputError


@dataclass(frozen=True, slots=True, eq=False)
class LabeledDataset:
    """Images ``(N, H, W, C)`` in ``[0, 1]`` with class ids in ``[0, num_classes)``.

    Attributes:
        samples: float32 image tensor.
        labels: int64 class ids.
        num_classes: Class count K.
        name: Human readable name (``pretrain``, ``trigger_base``...).
        provenance: Where the data came from, e.g. ``file:train-images.idx3-ubyte`` or ``synthetic:main:seed=0``.
    """

    samples: NDArray[np.float32]
    labels: NDArray[np.int64]
    num_classes: int
    name: str = "dataset"
    provenance: str = "memory"

    def __post_init__(self) -> None:
        """Validate shapes and value ranges."""
        if self.samples.ndim != 4:
            raise RejectedInputError(f"{self.name}: samples must be (N, H, W, C), got {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise RejectedInputError(f"{self.name}: {self.samples.shape[0]} samples but labels shape {self.labels.shape}")
        if self.num_classes < 2:
            raise RejectedInputError(f"{self.name}: num_classes must be >= 2, got {self.num_classes}")
        if len(self) == 0:
            return
        if self.samples.min() < 0.0 or self.samples.max() > 1.0:
            raise RejectedInputError(f"{self.name}: sample values must lie in [0, 1]")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise RejectedInputError(f"{self.name}: labels must lie in [0, {self.num_classes})")

    @classmethod
    def from_arrays(
        cls,
        samples: NDArray[np.floating],
        labels: NDArray[np.integer],
        num_classes: int,
        *,
        name: str = "dataset",
        provenance: str = "memory",
    ) -> LabeledDataset:
        """Build a dataset, coercing dtypes to float32/int64."""
        return cls(
            samples=np.ascontiguousarray(samples, dtype=np.float32),
            labels=np.asarray(labels, dtype=np.int64),
            num_classes=num_classes,
            name=name,
            provenance=provenance,
        )

    def __len__(self) -> int:
        """Number of samples."""
        return int(self.labels.shape[0])

    @property
    def input_shape(self) -> tuple[int, int, int]:
        """Per-sample shape ``(H, W, C)``."""
        h, w, c = self.samples.shape[1:]
        return int(h), int(w), int(c)

    def subset(self, indices: NDArray[np.integer], *, name: str | None = None) -> LabeledDataset:
        """Return the rows at ``indices`` (order kept) as a new dataset."""
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(
            samples=self.samples[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            name=name or self.name,
            provenance=self.provenance,
        )

    def relabeled(self, labels: NDArray[np.integer], *, name: str | None = None) -> LabeledDataset:
        """Return the same samples with different labels."""
        return LabeledDataset(
            samples=self.samples,
            labels=np.asarray(labels, dtype=np.int64),
            num_classes=self.num_classes,
            name=name or self.name,
            provenance=self.provenance,
        )


def concat(*parts: LabeledDataset, name: str = "concat") -> LabeledDataset:
    """Stack datasets that share input shape and class count."""
    if not parts:
        raise RejectedInputError("nothing to concatenate")
    if len({p.input_shape for p in parts}) != 1 or len({p.num_classes for p in parts}) != 1:
        raise RejectedInputError("datasets disagree on input shape or class count")
    return LabeledDataset(
        samples=np.concatenate([p.samples for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        num_classes=parts[0].num_classes,
        name=name,
        provenance="+".join(p.provenance for p in parts),
    )


@dataclass(frozen=True, slots=True, eq=False)
class Batch:
    """One mini-batch; ``index`` holds the source row of every sample."""

    x: NDArray[np.float32]
    y: NDArray[np.int64]
    index: NDArray[np.intp]

    def __len__(self) -> int:
        """Batch size."""
        return int(self.y.shape[0])


def batches(dataset: LabeledDataset, batch_size: int, epoch_seed: int) -> list[Batch]:
    """Split a seeded permutation of ``dataset`` into consecutive batches.

    The last partial batch is kept, so ``N=10, batch_size=4`` yields sizes ``[4, 4, 2]``.

    Raises:
        RejectedInputError: If ``batch_size < 1``.
    """
    if batch_size < 1:
        raise RejectedInputError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(epoch_seed).permutation(len(dataset))
    out: list[Batch] = []
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        out.append(Batch(x=dataset.samples[idx], y=dataset.labels[idx], index=idx))
    return out
