"""Tests for the command-line interface."""

from pathlib import Path

import pytest
from conftest import tiny_config

from pywmlab.cli import build_parser, config_from_args, main
from pywmlab.models.config import render_config
from pywmlab.protocols import LrTier


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    for name in ("WMLAB_CONFIG", "WMLAB_SEED", "WMLAB_OUT"):
        monkeypatch.delenv(name, raising=False)


def test_flags_override_config() -> None:
    """Flags map onto config overrides; --lr also moves the landscape tier."""
    args = build_parser().parse_args(["run", "--lr", "big", "--seed", "3", "--trigger", "content", "--set", "embed.epochs=5", "--set", "data.per_class=50"])
    cfg = config_from_args(args)
    assert cfg.attack.tiers == [LrTier.BIG]
    assert cfg.landscape.tier is LrTier.BIG
    assert cfg.experiment.seed == 3
    assert cfg.triggers.type == "content"
    assert cfg.embed.epochs == 5 and cfg.data.per_class == 50


def test_env_defaults(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    """WMLAB_* variables fill flags that were not given."""
    monkeypatch.setenv("WMLAB_SEED", "7")
    monkeypatch.setenv("WMLAB_OUT", str(tmp_path))
    cfg = config_from_args(build_parser().parse_args(["run"]))
    assert cfg.experiment.seed == 7
    assert cfg.experiment.out_dir == str(tmp_path)


def test_malformed_set_is_rejected() -> None:
    """--set without '=' is a usage error."""
    with pytest.raises(ValueError):
        config_from_args(build_parser().parse_args(["run", "--set", "embed.epochs"]))
    with pytest.raises(SystemExit) as info:
        main(["run", "--set", "embed.epochs"])
    assert "ValueError" in str(info.value.code)


def test_invalid_config_exits_with_message() -> None:
    """Validation errors become a readable exit message."""
    with pytest.raises(SystemExit) as info:
        main(["run", "--set", "embed.strategy=magic"])
    assert str(info.value.code).startswith("Invalid configuration")


def test_stage_commands_reuse_the_run_directory(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Stage commands share checkpoints; verify covers what exists."""
    path = tmp_path / "tiny.ini"
    path.write_text(render_config(tiny_config(tmp_path / "runs")), encoding="utf-8")
    with pytest.raises(SystemExit) as info:
        main(["embed", "--config", str(path), "--quiet"])
    assert info.value.code == 0
    assert "embedded" in capsys.readouterr().out

    with pytest.raises(SystemExit) as info:
        main(["attack-finetune", "--config", str(path), "--quiet"])
    assert info.value.code == 0
    assert "finetune-small" in capsys.readouterr().out
    assert (tmp_path / "runs" / "run-mlp-noise-single-joint-s0" / "checkpoints" / "finetune-small.wmlb").is_file()


def test_report_without_runs(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """The report over an empty directory says there is nothing to show."""
    out = tmp_path / "report.md"
    with pytest.raises(SystemExit) as info:
        main(["report", "--runs", str(tmp_path), "--output", str(out)])
    assert info.value.code == 0
    assert "No completed runs." in out.read_text(encoding="utf-8")
