"""Desk-scale property checks of the whole watermark lifecycle.

Every test here trains several full-size models and is marked ``slow``; run them with
``pytest --run-slow``.
"""

from pathlib import Path
from statistics import median

import numpy as np
import pytest
from conftest import tiny_config

from pywmlab.models.config import ExperimentConfig
from pywmlab.models.results import RunSummary
from pywmlab.nn import accuracy, predict_batch
from pywmlab.pipeline import Experiment, run_pipeline
from pywmlab.triggers import FgsmTrigger, generate

SEEDS = (0, 1, 2)

pytestmark = pytest.mark.slow


def _desk_config(out_dir: Path, seed: int, **sections: dict[str, object]) -> ExperimentConfig:
    values: dict[str, dict[str, object]] = {
        "experiment": {"seed": seed},
        "data": {"per_class": 500, "image_size": 28, "test_size": 1000, "trigger_size": 200, "ood_per_class": 40},
        "model": {"widths": [256, 128]},
        "pretrain": {"epochs": 20, "batch_size": 128},
        "embed": {"epochs": 30, "batch_size": 128},
        "attack": {"tiers": ["small"], "epochs": 50, "batch_size": 128},
        "restore": {"epochs": 30, "batch_size": 128, "control": False},
    }
    for name, extra in sections.items():
        values.setdefault(name, {}).update(extra)
    return tiny_config(out_dir, **values)


def _runs(tmp_path: Path, **sections: dict[str, object]) -> list[RunSummary]:
    return [run_pipeline(_desk_config(tmp_path / f"s{seed}", seed, **sections)) for seed in SEEDS]


def test_finetune_degradation_grows_with_learning_rate(tmp_path: Path) -> None:
    """Median trigger accuracy after fine-tuning falls from tier to tier and drops by 0.15 at the big tier."""
    runs = _runs(tmp_path, attack={"tiers": ["small", "med", "big"]})
    after = {tier: median(r.attacks[tier].post_attack_trigger_acc for r in runs) for tier in ("small", "med", "big")}
    assert after["small"] >= after["med"] >= after["big"]
    assert median(r.embed_trigger_acc - r.attacks["big"].post_attack_trigger_acc for r in runs) >= 0.15


@pytest.mark.parametrize("trigger", ["noise", "unrelated"])
def test_retraining_restores_only_a_real_watermark(tmp_path: Path, trigger: str) -> None:
    """Clean retraining brings the watermark back; the never-watermarked control gains nothing."""
    runs = _runs(tmp_path, triggers={"type": trigger}, restore={"control": True})
    gains = [r.attacks["small"].restoration_gain for r in runs]
    assert all(g is not None for g in gains)
    assert median(g for g in gains if g is not None) >= 0.20
    if trigger == "noise":
        assert sum((r.attacks["small"].restore_max_trigger_acc or 0.0) >= 0.95 for r in runs) >= 2

    control_gains: list[float] = []
    for r in runs:
        assert r.control is not None and r.control.restoration_gain is not None
        assert r.control.restoration_gain < 0.10
        assert r.control.verify is not None and not r.control.verify.watermarked
        assert r.control.verify.alpha == pytest.approx(1e-6)
        control_gains.append(r.control.restoration_gain)
    assert median(g for g in gains if g is not None) > median(control_gains)


@pytest.mark.parametrize("trigger", ["noise", "content", "unrelated", "fgsm"])
def test_extraction_removes_the_watermark(tmp_path: Path, trigger: str) -> None:
    """A surrogate copies the victim's behaviour but retraining does not bring the watermark back."""
    summary = run_pipeline(
        _desk_config(
            tmp_path,
            0,
            triggers={"type": trigger},
            attack={"epochs": 5},
            restore={"epochs": 30},
            extract={"enabled": True, "epochs": 30, "batch_size": 128},
        )
    )
    assert summary.extract is not None
    assert summary.extract.agreement >= 0.85
    assert summary.extract.restoration_gain is not None and summary.extract.restoration_gain < 0.10


def test_blending_keeps_more_of_the_watermark(tmp_path: Path) -> None:
    """With unrelated triggers, blended fine-tuning ends with at least the plain run's trigger accuracy."""
    runs = _runs(
        tmp_path,
        triggers={"type": "unrelated"},
        attack={"epochs": 5},
        blend={"enabled": True, "lr": 5e-4, "mix_interval": 2, "epochs": 50},
    )
    blends = [r.blend for r in runs]
    assert all(b is not None and b.lr == pytest.approx(5e-4) and b.mix_interval == 2 for b in blends)
    blended = median(b.blended_final_trigger_acc for b in blends if b is not None)
    plain = median(b.plain_final_trigger_acc for b in blends if b is not None)
    assert blended >= plain


def test_retrain_endpoint_sits_in_lower_trigger_loss(tmp_path: Path) -> None:
    """On the landscape grid the retrained model has lower trigger loss than the attacked one."""
    config = _desk_config(tmp_path, 0, landscape={"enabled": True, "tier": "small", "resolution": 21})
    summary = run_pipeline(config)
    land = summary.landscape
    assert land is not None
    assert land.attack_endpoint_loss is not None and land.retrain_endpoint_loss is not None
    assert land.retrain_endpoint_loss < land.attack_endpoint_loss
    assert (config.run_dir / "landscape" / "grid.csv").is_file()


def test_fgsm_flips_a_third_of_clean_predictions(tmp_path: Path) -> None:
    """On a clean model above 90% test accuracy, an epsilon 0.1 step changes at least 30% of predictions."""
    exp = Experiment(_desk_config(tmp_path, 0, triggers={"type": "fgsm"}))
    clean = exp.clean_model()
    assert clean is not None
    splits = exp.splits()
    assert accuracy(clean, splits.test) >= 0.90
    base = splits.trigger_base
    gen = generate(FgsmTrigger(epsilon=0.1), base, seed=0, clean_model=clean)
    assert gen.adversarial_labels is not None
    flipped = float(np.mean(gen.adversarial_labels != predict_batch(clean, base.samples)))
    assert flipped >= 0.30
