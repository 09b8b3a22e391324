"""Tests for sweep expansion, dispatch and median aggregation."""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import pytest

from pywmlab import sweep
from pywmlab.models import AttackSummary, RunSummary
from pywmlab.models.config import ExperimentConfig
from pywmlab.sweep import SweepGrid, expand_sweep, run_sweep, sweep_medians, write_sweep_summary


def _fake_run(payload: dict[str, Any]) -> dict[str, Any]:
    config = ExperimentConfig.model_validate(payload)
    seed = config.experiment.seed
    summary = RunSummary(
        run_id=config.run_id,
        seed=seed,
        model_kind=str(config.model.kind),
        trigger=config.triggers.type,
        labels=config.triggers.labels,
        strategy=config.embed.strategy,
        embed_test_acc=0.8 + 0.01 * seed,
        embed_trigger_acc=1.0,
        attacks={"small": AttackSummary(tier="small", attack_lr=1e-4, restore_lr=1e-4, post_attack_trigger_acc=0.1 * seed, post_attack_test_acc=0.8, restoration_gain=0.2)},
    )
    return summary.model_dump(mode="json")


def test_expand_sweep_order() -> None:
    """Seeds vary fastest; empty axes keep the base value."""
    configs = expand_sweep(ExperimentConfig(), SweepGrid(seeds=[0, 1], strategies=["joint", "rotation"]))
    assert [(c.embed.strategy, c.experiment.seed) for c in configs] == [("joint", 0), ("joint", 1), ("rotation", 0), ("rotation", 1)]
    assert {c.triggers.type for c in configs} == {"noise"}
    assert len({c.run_id for c in configs}) == 4


@pytest.mark.asyncio
async def test_run_sweep_keeps_input_order(monkeypatch: pytest.MonkeyPatch) -> None:
    """Summaries come back in config order whatever the completion order."""
    monkeypatch.setattr(sweep, "run_config", _fake_run)
    configs = expand_sweep(ExperimentConfig(), SweepGrid(seeds=[0, 1, 2]))
    with ThreadPoolExecutor(max_workers=3) as pool:
        summaries = await run_sweep(configs, executor=pool)
    assert [s.run_id for s in summaries] == [c.run_id for c in configs]


@pytest.mark.asyncio
async def test_run_sweep_rejects_duplicate_ids() -> None:
    """Two configs with the same run id would share a directory."""
    config = ExperimentConfig()
    with pytest.raises(ValueError):
        await run_sweep([config, config])


@pytest.mark.asyncio
async def test_run_sweep_reports_failures(monkeypatch: pytest.MonkeyPatch) -> None:
    """A failing run surfaces in an exception group."""

    def boom(payload: dict[str, Any]) -> dict[str, Any]:
        raise RuntimeError("run failed")

    monkeypatch.setattr(sweep, "run_config", boom)
    with ThreadPoolExecutor(max_workers=1) as pool, pytest.raises(ExceptionGroup):
        await run_sweep(expand_sweep(ExperimentConfig(), SweepGrid(seeds=[0])), executor=pool)


def test_sweep_medians_and_summary_files(tmp_path: Path) -> None:
    """Medians are taken over seeds per cell and written alongside the report."""
    configs = expand_sweep(ExperimentConfig(), SweepGrid(seeds=[0, 1, 2]))
    summaries = [RunSummary.model_validate(_fake_run(c.model_dump(mode="json"))) for c in configs]
    cell = sweep_medians(summaries)["joint/noise/single"]
    assert cell["runs"] == 3 and cell["seeds"] == [0, 1, 2]
    assert cell["embed_test_acc"] == pytest.approx(0.81)
    assert cell["attacks"]["small"]["post_attack_trigger_acc"] == pytest.approx(0.1)
    assert cell["blend_trigger_acc"] is None
    write_sweep_summary(tmp_path, summaries)
    assert (tmp_path / "sweep_summary.json").exists()
    assert "| joint | noise | single | 3 |" in (tmp_path / "sweep_report.md").read_text(encoding="utf-8")
