"""Parallel sweeps: independent runs in worker processes, medians per grid cell.

A sweep expands one base config over seeds × trigger types × labeling schemes ×
strategies. Runs never share a directory; the dispatcher only gathers their summaries.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
import statistics
from collections.abc import Sequence
from concurrent.futures import Executor, ProcessPoolExecutor
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

from .models.config import ExperimentConfig, apply_overrides
from .models.results import RunSummary
from .pipeline import run_pipeline
from .report import group_runs, render_report
from .utils import save_json_payload

log = logging.getLogger(__name__)


class SweepGrid(BaseModel):
    """Axes of a sweep; an empty axis keeps the base config's value."""

    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    triggers: list[Literal["noise", "content", "unrelated", "fgsm"]] = Field(default_factory=list)
    labels: list[Literal["single", "multi"]] = Field(default_factory=list)
    strategies: list[Literal["joint", "rotation", "smoothed"]] = Field(default_factory=list)

    model_config = ConfigDict(frozen=True)


def expand_sweep(base: ExperimentConfig, grid: SweepGrid) -> list[ExperimentConfig]:
    """One config per grid point, in a fixed order (seed varies fastest)."""
    triggers = grid.triggers or [base.triggers.type]
    labels = grid.labels or [base.triggers.labels]
    strategies = grid.strategies or [base.embed.strategy]
    seeds = grid.seeds or [base.experiment.seed]
    out: list[ExperimentConfig] = []
    for strategy, trigger, scheme, seed in itertools.product(strategies, triggers, labels, seeds):
        out.append(
            apply_overrides(
                base,
                {"embed.strategy": strategy, "triggers.type": trigger, "triggers.labels": scheme, "experiment.seed": seed},
            )
        )
    return out


def run_config(payload: dict[str, Any]) -> dict[str, Any]:
    """Worker entry point: validate a dumped config, run it and return the dumped summary."""
    config = ExperimentConfig.model_validate(payload)
    return run_pipeline(config).model_dump(mode="json")


async def run_sweep(
    configs: Sequence[ExperimentConfig],
    *,
    max_workers: int = 1,
    executor: Executor | None = None,
) -> list[RunSummary]:
    """Run ``configs`` concurrently and return their summaries in input order.

    Args:
        configs: Configurations to run; their run ids must be distinct.
        max_workers: Process count when no ``executor`` is given.
        executor: Executor to use instead of a private process pool (not shut down here).

    Raises:
        ValueError: On duplicate run ids.
        ExceptionGroup: Wrapping the failures of any runs that raised.
    """
    ids = [c.run_id for c in configs]
    if len(set(ids)) != len(ids):
        raise ValueError("sweep configs must have distinct run ids")
    loop = asyncio.get_running_loop()
    pool = executor or ProcessPoolExecutor(max_workers=max_workers)
    results: list[RunSummary | None] = [None] * len(configs)

    async def one(i: int, config: ExperimentConfig) -> None:
        log.info("sweep: start %s", config.run_id)
        dumped = await loop.run_in_executor(pool, run_config, config.model_dump(mode="json"))
        results[i] = RunSummary.model_validate(dumped)
        log.info("sweep: done %s (%d/%d)", config.run_id, sum(r is not None for r in results), len(configs))

    try:
        async with asyncio.TaskGroup() as tg:
            for i, config in enumerate(configs):
                tg.create_task(one(i, config))
    finally:
        if executor is None:
            pool.shutdown(wait=True)
    return [r for r in results if r is not None]


def _median(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return statistics.median(present) if present else None


def sweep_medians(summaries: Sequence[RunSummary]) -> dict[str, dict[str, Any]]:
    """Median headline numbers per ``strategy/trigger/labels`` cell."""
    out: dict[str, dict[str, Any]] = {}
    for (strategy, trigger, labels), runs in sorted(group_runs(summaries).items()):
        cell: dict[str, Any] = {
            "runs": len(runs),
            "seeds": sorted(r.seed for r in runs),
            "clean_test_acc": _median([r.clean_test_acc for r in runs]),
            "embed_test_acc": _median([r.embed_test_acc for r in runs]),
            "embed_trigger_acc": _median([r.embed_trigger_acc for r in runs]),
        }
        tiers = sorted({t for r in runs for t in r.attacks})
        cell["attacks"] = {
            t: {
                "post_attack_trigger_acc": _median([r.attacks[t].post_attack_trigger_acc for r in runs if t in r.attacks]),
                "restore_max_trigger_acc": _median([r.attacks[t].restore_max_trigger_acc for r in runs if t in r.attacks]),
                "restoration_gain": _median([r.attacks[t].restoration_gain for r in runs if t in r.attacks]),
            }
            for t in tiers
        }
        cell["control_restoration_gain"] = _median([r.control.restoration_gain for r in runs if r.control])
        cell["blend_trigger_acc"] = _median([r.blend.blended_final_trigger_acc for r in runs if r.blend])
        cell["plain_trigger_acc"] = _median([r.blend.plain_final_trigger_acc for r in runs if r.blend])
        cell["extract_agreement"] = _median([r.extract.agreement for r in runs if r.extract])
        cell["extract_restoration_gain"] = _median([r.extract.restoration_gain for r in runs if r.extract])
        out[f"{strategy}/{trigger}/{labels}"] = cell
    return out


def write_sweep_summary(out_dir: str | Path, summaries: Sequence[RunSummary]) -> Path:
    """Write ``sweep_summary.json`` (medians plus run ids) and ``sweep_report.md``."""
    root = Path(out_dir)
    path = save_json_payload(
        {"runs": [s.run_id for s in summaries], "cells": sweep_medians(summaries)},
        root / "sweep_summary.json",
    )
    (root / "sweep_report.md").write_text(render_report(summaries), encoding="utf-8")
    return path
