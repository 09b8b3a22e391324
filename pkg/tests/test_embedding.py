"""Tests for clean pretraining, watermark embedding and the step policies."""

import numpy as np
import pytest

from pywmlab.data import LabeledDataset
from pywmlab.embedding import (
    JointPoison,
    LayerRotation,
    LayerRotationStep,
    SmoothedGrad,
    SmoothedGradStep,
    TrainConfig,
    embed,
    evaluate_watermark,
    policy_for,
    pretrain_clean,
)
from pywmlab.errors import RejectedInputError
from pywmlab.models.trace import Phase
from pywmlab.nn import CosineSchedule, Model, ModelSpec, StepContext, loss_and_grads
from pywmlab.training import PlainStep
from pywmlab.triggers import MultiLabel, NoiseTrigger, SingleLabel, TriggerSet, make_trigger_set

CONFIG = TrainConfig(epochs=2, batch_size=32, wm_batch_size=8, schedule=CosineSchedule(lr_start=1e-2, lr_end=1e-4), seed=0)


@pytest.fixture
def trigger_set(tiny_dataset: LabeledDataset) -> TriggerSet:
    """Noise triggers over the first 24 samples, single target 3."""
    base = tiny_dataset.subset(np.arange(24))
    return make_trigger_set(NoiseTrigger(), SingleLabel(target=3), base, num_classes=10, seed=0)


def test_rotation_policy_trains_one_group_per_step(tiny_mlp: Model) -> None:
    """Step s only unmasks layer group s mod L."""
    policy = LayerRotationStep(tiny_mlp.spec.layer_groups)
    for step, group in enumerate(["dense0", "dense1", "logits", "dense0"]):
        mask = policy.trainable(tiny_mlp, step)
        assert mask is not None
        assert {name for name, on in mask.items() if on} == {f"{group}.weight", f"{group}.bias"}


def test_policy_for_strategies(tiny_mlp: Model) -> None:
    """Each strategy maps to its step policy."""
    assert isinstance(policy_for(JointPoison(), tiny_mlp.spec, seed=0), PlainStep)
    assert isinstance(policy_for(LayerRotation(), tiny_mlp.spec, seed=0), LayerRotationStep)
    assert isinstance(policy_for(SmoothedGrad(n_copies=2), tiny_mlp.spec, seed=0), SmoothedGradStep)


def test_smoothed_gradient_ignores_worker_count(tiny_mlp: Model, tiny_dataset: LabeledDataset) -> None:
    """Copies are seeded per (step, copy), so thread fan-out gives identical gradients."""
    x, y = tiny_dataset.samples[:16], tiny_dataset.labels[:16]
    where = StepContext(phase="embed")
    serial = SmoothedGradStep(4, 0.01, seed=3, workers=1).gradients(tiny_mlp, x, y, step=2, where=where)
    threaded = SmoothedGradStep(4, 0.01, seed=3, workers=3).gradients(tiny_mlp, x, y, step=2, where=where)
    assert serial[0] == threaded[0]
    assert all(np.array_equal(serial[1][k], threaded[1][k]) for k in serial[1])


def test_smoothed_gradient_approaches_plain_for_small_noise(tiny_mlp: Model, tiny_dataset: LabeledDataset) -> None:
    """With negligible noise the smoothed gradient is the plain gradient."""
    x, y = tiny_dataset.samples[:16], tiny_dataset.labels[:16]
    _, plain = loss_and_grads(tiny_mlp, x, y)
    _, smooth = SmoothedGradStep(2, 1e-9, seed=0).gradients(tiny_mlp, x, y, step=0, where=StepContext())
    for name in plain:
        np.testing.assert_allclose(smooth[name], plain[name], rtol=1e-3, atol=1e-5)


def test_pretrain_and_fresh_embed_share_initialization(tiny_dataset: LabeledDataset, trigger_set: TriggerSet) -> None:
    """A fresh embed starts from the same weights as clean pretraining."""
    spec = ModelSpec.mlp((12, 12, 1), 10, (16, 12))
    _, clean = pretrain_clean(spec, tiny_dataset, CONFIG, test_set=tiny_dataset)
    _, wm = embed(spec, tiny_dataset, trigger_set, JointPoison(), CONFIG, test_set=tiny_dataset)
    assert clean.initial.test_acc == wm.initial.test_acc
    assert clean.phase is Phase.PRETRAIN and wm.phase is Phase.EMBED


def test_embed_trace_rows(tiny_mlp: Model, tiny_dataset: LabeledDataset, trigger_set: TriggerSet) -> None:
    """One row per epoch plus epoch 0, each with trigger accuracy."""
    model, trace = embed(tiny_mlp, tiny_dataset, trigger_set, LayerRotation(), CONFIG, test_set=tiny_dataset)
    assert [r.epoch for r in trace.rows] == [0, 1, 2]
    assert all(r.trigger_acc is not None for r in trace.rows)
    assert trace.final.trigger_acc == evaluate_watermark(model, trigger_set)
    assert trace.rows[1].lr == pytest.approx(1e-2)


def test_embed_is_deterministic(tiny_mlp: Model, tiny_dataset: LabeledDataset, trigger_set: TriggerSet) -> None:
    """Same inputs and seed give bit-identical parameters."""
    a, _ = embed(tiny_mlp, tiny_dataset, trigger_set, JointPoison(), CONFIG, test_set=tiny_dataset)
    b, _ = embed(tiny_mlp, tiny_dataset, trigger_set, JointPoison(), CONFIG, test_set=tiny_dataset)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_embed_rejects_class_mismatch(tiny_mlp: Model, tiny_dataset: LabeledDataset) -> None:
    """The trigger set must use the model's class count."""
    base = LabeledDataset.from_arrays(tiny_dataset.samples[:8], tiny_dataset.labels[:8] % 5, 5)
    ts = make_trigger_set(NoiseTrigger(), MultiLabel(), base, num_classes=5, seed=0)
    with pytest.raises(RejectedInputError):
        embed(tiny_mlp, tiny_dataset, ts, JointPoison(), CONFIG, test_set=tiny_dataset)


def test_single_copy_smoothing_with_vanishing_noise_matches_joint(
    tiny_mlp: Model, tiny_dataset: LabeledDataset, trigger_set: TriggerSet
) -> None:
    """One noised copy at noise 1e-12 follows the joint-poisoning run within float32 rounding."""
    joint, joint_trace = embed(tiny_mlp, tiny_dataset, trigger_set, JointPoison(), CONFIG, test_set=tiny_dataset)
    single = SmoothedGrad(n_copies=1, noise_std=1e-12)
    smooth, smooth_trace = embed(tiny_mlp, tiny_dataset, trigger_set, single, CONFIG, test_set=tiny_dataset)
    for name in joint.params:
        np.testing.assert_allclose(smooth.params[name], joint.params[name], rtol=1e-4, atol=1e-5)
    assert [r.train_loss for r in smooth_trace.rows] == pytest.approx([r.train_loss for r in joint_trace.rows], rel=1e-4)
