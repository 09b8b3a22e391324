"""Datasets: IDX loading, synthetic generation, splits and batching."""

from .dataset import Batch, LabeledDataset, batches, concat
from .idx import load_idx, write_idx
from .splits import SplitBundle, make_splits
from .synth import SynthSpec, synth_generate

__all__ = [
    "Batch",
    "LabeledDataset",
    "SplitBundle",
    "SynthSpec",
    "batches",
    "concat",
    "load_idx",
    "make_splits",
    "synth_generate",
    "write_idx",
]
