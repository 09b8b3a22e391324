"""Tests for experiment configuration parsing, validation and overrides."""

from pathlib import Path

import pytest
from pydantic import ValidationError

from pywmlab.models.config import (
    ExperimentConfig,
    apply_overrides,
    load_config,
    parse_config_text,
    parse_value,
    render_config,
)
from pywmlab.nn import ModelKind
from pywmlab.protocols import LrTier


def test_defaults() -> None:
    """Defaults describe the documented full-size run."""
    cfg = load_config(None)
    assert cfg.experiment.seed == 0
    assert cfg.attack.tiers == [LrTier.SMALL, LrTier.MED, LrTier.BIG]
    assert cfg.pretrain.epochs == 50 and cfg.restore.epochs == 30
    assert cfg.run_id == "run-mlp-noise-single-joint-s0"
    assert cfg.run_dir == Path("runs") / cfg.run_id


@pytest.mark.parametrize(
    ("raw", "expected"),
    [("true", True), ("None", None), ("42", 42), ("1e-4", 1e-4), ("small, big", ["small", "big"]), ("[1, 2]", [1, 2]), ("fgsm", "fgsm")],
)
def test_parse_value(raw: str, expected: object) -> None:
    """Config literals parse to bools, numbers, lists and strings."""
    assert parse_value(raw) == expected


def test_parse_ini_text() -> None:
    """INI sections map onto config sections."""
    cfg = parse_config_text("[experiment]\nseed = 3\n[triggers]\ntype = content\nlabels = multi\n[attack]\ntiers = big\n[model]\nkind = small_cnn\n[landscape]\ntier = big\n")
    assert cfg.experiment.seed == 3
    assert cfg.triggers.type == "content" and cfg.triggers.labels == "multi"
    assert cfg.attack.tiers == [LrTier.BIG]
    assert cfg.model.kind is ModelKind.SMALL_CNN
    assert cfg.landscape.tier is LrTier.BIG


def test_unknown_section_and_key() -> None:
    """Unknown sections and keys are errors, not silently ignored."""
    with pytest.raises(ValueError):
        parse_config_text("[bogus]\nx = 1\n")
    with pytest.raises(ValidationError):
        parse_config_text("[experiment]\nsed = 1\n")


def test_fgsm_needs_pretrain() -> None:
    """FGSM triggers without a clean model are rejected at load time."""
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"triggers": {"type": "fgsm"}, "pretrain": {"enabled": False}})


def test_landscape_tier_must_be_attacked() -> None:
    """The landscape tier has to be one of the attacked tiers."""
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"attack": {"tiers": ["big"]}, "landscape": {"tier": "small"}})


def test_apply_overrides_revalidates() -> None:
    """Overrides produce a new validated config and leave the original alone."""
    base = ExperimentConfig()
    cfg = apply_overrides(base, {"experiment.seed": 9, "embed.strategy": "smoothed", "embed.n_copies": 4})
    assert cfg.experiment.seed == 9 and base.experiment.seed == 0
    assert cfg.embed.embed_strategy().n_copies == 4  # type: ignore[union-attr]
    with pytest.raises(ValueError):
        apply_overrides(base, {"seed": 1})
    with pytest.raises(ValidationError):
        apply_overrides(base, {"embed.strategy": "magic"})


def test_render_config_roundtrip() -> None:
    """Rendered INI parses back to an equal config."""
    cfg = apply_overrides(ExperimentConfig(), {"attack.tiers": ["small", "med"], "model.widths": [32, 16], "extract.query_budget": 500})
    assert parse_config_text(render_config(cfg)) == cfg


def test_derived_stage_configs() -> None:
    """Stage configs carry the tier rates and the experiment seed."""
    cfg = apply_overrides(ExperimentConfig(), {"experiment.seed": 4})
    assert cfg.finetune_attack("med").lr == 5e-4
    assert cfg.restore_config("med").lr == 2e-4
    assert cfg.blend_plain_attack().lr == cfg.blend.lr
    assert cfg.embed_config().seed == 4
    assert cfg.surrogate_spec((12, 12, 1), 10).kind is ModelKind.MLP
    cnn = apply_overrides(cfg, {"extract.surrogate_kind": "small_cnn"}).surrogate_spec((12, 12, 1), 10)
    assert cnn.kind is ModelKind.SMALL_CNN and cnn.widths == (8, 16)
