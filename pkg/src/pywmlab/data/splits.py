"""Seeded partition into trigger base, pretrain, fine-tune and test splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ..errors import RejectedInputError
from ..utils import round_half_up
from .dataset import LabeledDataset

log = logging.getLogger(__name__)

TRIGGER_SIZE = 200
PRETRAIN_RATIO = 0.7
DEFAULT_TEST_SIZE = 1000


@dataclass(frozen=True, slots=True, eq=False)
class SplitBundle:
    """The four disjoint splits plus the source-row indices they were cut from.

    ``indices`` maps split name to rows of the source dataset. When the test split was
    supplied separately it has no entry there.
    """

    trigger_base: LabeledDataset
    pretrain: LabeledDataset
    finetune: LabeledDataset
    test: LabeledDataset
    split_seed: int
    indices: dict[str, NDArray[np.intp]]

    def sizes(self) -> dict[str, int]:
        """Split name to sample count."""
        return {
            "trigger_base": len(self.trigger_base),
            "pretrain": len(self.pretrain),
            "finetune": len(self.finetune),
            "test": len(self.test),
        }


def make_splits(
    dataset: LabeledDataset,
    split_seed: int,
    *,
    test_size: int = DEFAULT_TEST_SIZE,
    test: LabeledDataset | None = None,
    trigger_size: int = TRIGGER_SIZE,
    pretrain_ratio: float = PRETRAIN_RATIO,
) -> SplitBundle:
    """Partition ``dataset`` by one seeded permutation.

    Rows are taken in permutation order: ``test_size`` test rows (skipped when ``test`` is
    given), then ``trigger_size`` trigger-base rows; of the remaining ``R`` rows
    ``round_half_up(R * pretrain_ratio)`` go to pretrain and the rest to fine-tune.

    Raises:
        RejectedInputError: If the dataset cannot hold the trigger base, the test split and
            at least one pretrain row.
    """
    carve_test = test is None
    reserved = trigger_size + (test_size if carve_test else 0)
    if len(dataset) <= reserved:
        raise RejectedInputError(f"dataset of {len(dataset)} samples is too small: need more than {reserved}")
    if test is not None and (test.input_shape != dataset.input_shape or test.num_classes != dataset.num_classes):
        raise RejectedInputError("test set disagrees with the training pool on shape or class count")

    perm = np.random.default_rng(split_seed).permutation(len(dataset)).astype(np.intp)
    cursor = 0
    indices: dict[str, NDArray[np.intp]] = {}
    if carve_test:
        indices["test"] = perm[:test_size]
        cursor = test_size
    indices["trigger_base"] = perm[cursor : cursor + trigger_size]
    remaining = perm[cursor + trigger_size :]
    n_pre = round_half_up(len(remaining), pretrain_ratio)
    indices["pretrain"] = remaining[:n_pre]
    indices["finetune"] = remaining[n_pre:]

    bundle = SplitBundle(
        trigger_base=dataset.subset(indices["trigger_base"], name="trigger_base"),
        pretrain=dataset.subset(indices["pretrain"], name="pretrain"),
        finetune=dataset.subset(indices["finetune"], name="finetune"),
        test=dataset.subset(indices["test"], name="test") if carve_test else test,  # type: ignore[arg-type]
        split_seed=split_seed,
        indices=indices,
    )
    log.debug("splits (seed=%d): %s", split_seed, bundle.sizes())
    return bundle
