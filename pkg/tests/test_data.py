"""Tests for datasets: IDX files, synthetic generation, splits and batching."""

import gzip
from pathlib import Path

import numpy as np
import pytest

from pywmlab.data import LabeledDataset, load_idx, make_splits, synth_generate
from pywmlab.data.dataset import batches, concat
from pywmlab.data.idx import write_idx
from pywmlab.data.synth import SynthSpec
from pywmlab.errors import FormatError, RejectedInputError
from pywmlab.utils import round_half_up


def _pool(n: int, k: int = 10) -> LabeledDataset:
    rng = np.random.default_rng(0)
    return LabeledDataset.from_arrays(rng.uniform(size=(n, 12, 12, 1)), np.arange(n) % k, k)


def test_idx_roundtrip_scales_pixels(tmp_path: Path) -> None:
    """Bytes become [0, 1] floats with a trailing channel axis."""
    images = np.array([[[0, 255], [51, 102]], [[255, 255], [0, 0]]], dtype=np.uint8)
    write_idx(tmp_path / "img.idx3-ubyte", tmp_path / "lab.idx1-ubyte", images, np.array([3, 1]))
    ds = load_idx(tmp_path / "img.idx3-ubyte", tmp_path / "lab.idx1-ubyte", num_classes=10)
    assert ds.samples.shape == (2, 2, 2, 1)
    assert ds.samples[0, 0, 1, 0] == pytest.approx(1.0)
    assert ds.samples[0, 1, 0, 0] == pytest.approx(0.2)
    assert ds.labels.tolist() == [3, 1]
    assert ds.provenance == "file:img.idx3-ubyte"


def test_idx_reads_gzip(tmp_path: Path) -> None:
    """``.gz`` files are decompressed transparently."""
    images = np.zeros((3, 4, 4), dtype=np.uint8)
    write_idx(tmp_path / "i.gz", tmp_path / "l.gz", images, np.array([0, 1, 2]))
    with gzip.open(tmp_path / "i.gz", "rb") as fh:
        assert fh.read(4) == b"\x00\x00\x08\x03"
    assert len(load_idx(tmp_path / "i.gz", tmp_path / "l.gz")) == 3


def test_idx_bad_magic_and_truncation(tmp_path: Path) -> None:
    """A wrong magic number or a short data block raises with the field name."""
    write_idx(tmp_path / "i", tmp_path / "l", np.zeros((2, 3, 3), dtype=np.uint8), np.array([0, 1]))
    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "i").write_bytes(raw[:-1])
    with pytest.raises(FormatError) as err:
        load_idx(tmp_path / "i", tmp_path / "l")
    assert err.value.field == "data"
    (tmp_path / "i").write_bytes(b"\x00\x00\x08\x01" + raw[4:])
    with pytest.raises(FormatError) as err:
        load_idx(tmp_path / "i", tmp_path / "l")
    assert err.value.field == "magic"


def test_idx_count_mismatch(tmp_path: Path) -> None:
    """Image and label counts must agree."""
    write_idx(tmp_path / "i", tmp_path / "l", np.zeros((2, 3, 3), dtype=np.uint8), np.array([0, 1]))
    write_idx(tmp_path / "i2", tmp_path / "l2", np.zeros((3, 3, 3), dtype=np.uint8), np.array([0, 1, 2]))
    with pytest.raises(FormatError):
        load_idx(tmp_path / "i", tmp_path / "l2")


def test_synth_is_deterministic_and_balanced() -> None:
    """Same seed gives the same images; every class appears per_class times."""
    spec = SynthSpec(num_classes=4, per_class=5, image_size=12)
    a, b = synth_generate(spec, 7), synth_generate(spec, 7)
    assert np.array_equal(a.samples, b.samples)
    assert np.bincount(a.labels).tolist() == [5, 5, 5, 5]
    assert a.samples.min() >= 0.0 and a.samples.max() <= 1.0
    assert not np.array_equal(a.samples, synth_generate(spec, 8).samples)


def test_synth_ood_family_differs() -> None:
    """The out-of-distribution family draws different images."""
    main = synth_generate(SynthSpec(num_classes=4, per_class=3, image_size=12), 0)
    ood = synth_generate(SynthSpec(num_classes=4, per_class=3, image_size=12, family="ood"), 0)
    assert ood.provenance.startswith("synthetic:ood")
    assert not np.allclose(main.samples, ood.samples)


def test_dataset_rejects_out_of_range_values() -> None:
    """Pixels outside [0, 1] and labels outside [0, K) are refused."""
    with pytest.raises(RejectedInputError):
        LabeledDataset.from_arrays(np.full((1, 2, 2, 1), 2.0), np.array([0]), 2)
    with pytest.raises(RejectedInputError):
        LabeledDataset.from_arrays(np.zeros((1, 2, 2, 1)), np.array([2]), 2)


def test_round_half_up() -> None:
    """Ratios round half-up exactly."""
    assert round_half_up(800, 0.7) == 560
    assert round_half_up(5, 0.7) == 4
    assert round_half_up(5, 0.5) == 3


def test_splits_sizes_with_carved_test() -> None:
    """6000 samples split into 1000 test, 200 trigger base, 3360 pretrain and 1440 fine-tune."""
    splits = make_splits(_pool(6000), split_seed=0)
    assert splits.sizes() == {"trigger_base": 200, "pretrain": 3360, "finetune": 1440, "test": 1000}


def test_splits_with_given_test_set() -> None:
    """A supplied test set is kept as is; the pool only feeds the other three splits."""
    test = _pool(50)
    splits = make_splits(_pool(1000), split_seed=3, test=test)
    assert splits.test is test
    assert splits.sizes() == {"trigger_base": 200, "pretrain": 560, "finetune": 240, "test": 50}
    assert "test" not in splits.indices


def test_splits_are_disjoint_and_seeded() -> None:
    """Splits never share a source row, and the same seed cuts the same rows."""
    pool = _pool(1500)
    a = make_splits(pool, split_seed=11, test_size=300)
    b = make_splits(pool, split_seed=11, test_size=300)
    rows = np.concatenate(list(a.indices.values()))
    assert rows.size == np.unique(rows).size == 1500
    assert all(np.array_equal(a.indices[k], b.indices[k]) for k in a.indices)
    assert not np.array_equal(a.indices["pretrain"], make_splits(pool, split_seed=12, test_size=300).indices["pretrain"])


def test_splits_reject_small_pool() -> None:
    """The pool must hold more rows than the test and trigger-base splits."""
    with pytest.raises(RejectedInputError):
        make_splits(_pool(1200), split_seed=0)


def test_batches_keep_last_partial_batch() -> None:
    """Ten samples in batches of four give sizes [4, 4, 2] covering every row once."""
    out = batches(_pool(10), 4, epoch_seed=1)
    assert [len(b) for b in out] == [4, 4, 2]
    assert sorted(np.concatenate([b.index for b in out]).tolist()) == list(range(10))


def test_concat_checks_shapes() -> None:
    """Datasets with different input shapes cannot be stacked."""
    other = LabeledDataset.from_arrays(np.zeros((2, 8, 8, 1)), np.array([0, 1]), 10)
    assert len(concat(_pool(3), _pool(4))) == 7
    with pytest.raises(RejectedInputError):
        concat(_pool(3), other)
