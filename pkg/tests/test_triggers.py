"""Tests for trigger generation, labeling and persistence."""

from pathlib import Path

import numpy as np
import pytest

from pywmlab.data import LabeledDataset
from pywmlab.errors import RejectedInputError
from pywmlab.nn import Model
from pywmlab.triggers import (
    ContentTrigger,
    FgsmTrigger,
    MultiLabel,
    NoiseTrigger,
    SingleLabel,
    UnrelatedTrigger,
    assign_labels,
    generate,
    load_trigger_set,
    make_trigger_set,
    resize_nearest,
    save_trigger_set,
)


def test_noise_trigger_stays_in_range(tiny_dataset: LabeledDataset) -> None:
    """Noised samples are clipped to [0, 1] and keep their source labels."""
    gen = generate(NoiseTrigger(strength=0.5), tiny_dataset, seed=0)
    assert gen.samples.shape == tiny_dataset.samples.shape
    assert gen.samples.min() >= 0.0 and gen.samples.max() <= 1.0
    assert np.array_equal(gen.original_labels, tiny_dataset.labels)
    assert not np.array_equal(gen.samples, tiny_dataset.samples)


def test_content_trigger_stamps_patch(tiny_dataset: LabeledDataset) -> None:
    """The patch region takes the patch value; the rest is untouched."""
    gen = generate(ContentTrigger(patch_size=3, value=0.9, row=2, col=4), tiny_dataset, seed=0)
    assert np.all(gen.samples[:, 2:5, 4:7, :] == np.float32(0.9))
    assert np.array_equal(gen.samples[:, 6:, :, :], tiny_dataset.samples[:, 6:, :, :])


def test_content_trigger_must_fit(tiny_dataset: LabeledDataset) -> None:
    """A patch reaching past the image edge is refused."""
    with pytest.raises(RejectedInputError):
        generate(ContentTrigger(patch_size=6, row=10), tiny_dataset, seed=0)


def test_unrelated_trigger_draws_and_resizes(tiny_dataset: LabeledDataset) -> None:
    """Draws come from the source without replacement, resized to the target shape."""
    gen = generate(UnrelatedTrigger(), tiny_dataset, seed=1, count=20, input_shape=(16, 16, 3))
    assert gen.samples.shape == (20, 16, 16, 3)
    with pytest.raises(RejectedInputError):
        generate(UnrelatedTrigger(), tiny_dataset, seed=1, count=len(tiny_dataset) + 1)


def test_resize_nearest_identity() -> None:
    """Resizing to the same shape returns the same pixels."""
    x = np.random.default_rng(0).uniform(size=(2, 5, 7, 1)).astype(np.float32)
    assert np.array_equal(resize_nearest(x, (5, 7, 1)), x)


def test_fgsm_needs_clean_model(tiny_dataset: LabeledDataset) -> None:
    """FGSM without a clean model is a precondition violation."""
    with pytest.raises(RejectedInputError):
        generate(FgsmTrigger(), tiny_dataset, seed=0)


def test_fgsm_steps_by_epsilon(tiny_dataset: LabeledDataset, tiny_mlp: Model) -> None:
    """Every pixel moves by at most epsilon and adversarial labels are recorded."""
    gen = generate(FgsmTrigger(epsilon=0.1), tiny_dataset, seed=0, clean_model=tiny_mlp)
    assert np.max(np.abs(gen.samples - tiny_dataset.samples)) <= 0.1 + 1e-6
    assert gen.samples.min() >= 0.0 and gen.samples.max() <= 1.0
    assert gen.adversarial_labels is not None
    assert gen.adversarial_labels.shape == tiny_dataset.labels.shape


def test_single_label_scheme() -> None:
    """Every trigger sample gets the target; an out-of-range target is refused."""
    assert assign_labels(np.array([1, 2, 3]), SingleLabel(target=4), num_classes=10, seed=0).tolist() == [4, 4, 4]
    with pytest.raises(RejectedInputError):
        assign_labels(np.array([1]), SingleLabel(target=10), num_classes=10, seed=0)


def test_multi_label_shift() -> None:
    """Without adversarial labels the multi scheme shifts by one, wrapping at K."""
    assert assign_labels(np.array([0, 4, 9]), MultiLabel(), num_classes=10, seed=0).tolist() == [1, 5, 0]


def test_multi_label_avoids_true_and_adversarial_classes() -> None:
    """Over many random cases the drawn label differs from both y and y_adv."""
    rng = np.random.default_rng(42)
    for case in range(10_000):
        k = int(rng.integers(3, 11))
        y = rng.integers(0, k, size=3)
        y_adv = rng.integers(0, k, size=3)
        out = assign_labels(y, MultiLabel(), num_classes=k, seed=case, adversarial_labels=y_adv)
        assert np.all(out != y) and np.all(out != y_adv)
        assert np.all((out >= 0) & (out < k))


def test_multi_label_empty_choice_set() -> None:
    """With two classes and y != y_adv nothing is left to draw from."""
    with pytest.raises(RejectedInputError):
        assign_labels(np.array([0]), MultiLabel(), num_classes=2, seed=0, adversarial_labels=np.array([1]))


def test_make_trigger_set_is_seeded(tiny_dataset: LabeledDataset) -> None:
    """Same seed, same trigger set."""
    a = make_trigger_set(NoiseTrigger(), MultiLabel(), tiny_dataset, num_classes=10, seed=5)
    b = make_trigger_set(NoiseTrigger(), MultiLabel(), tiny_dataset, num_classes=10, seed=5)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.labels, b.labels)
    assert a.description == "noise/multi"


def test_trigger_set_persists(tmp_path: Path, tiny_dataset: LabeledDataset, tiny_mlp: Model) -> None:
    """A saved FGSM trigger set loads back with its labels and parameters."""
    ts = make_trigger_set(FgsmTrigger(epsilon=0.2), MultiLabel(), tiny_dataset, num_classes=10, seed=1, clean_model=tiny_mlp)
    loaded = load_trigger_set(save_trigger_set(ts, tmp_path / "ts.wmlb"))
    assert np.array_equal(loaded.samples, ts.samples)
    assert np.array_equal(loaded.labels, ts.labels)
    assert loaded.adversarial_labels is not None
    assert loaded.trigger == ts.trigger
    assert loaded.scheme == ts.scheme
