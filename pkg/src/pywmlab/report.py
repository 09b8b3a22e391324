"""Markdown tables over finished runs, built only from their ``summary.json`` files."""

from __future__ import annotations

import itertools
import logging
import statistics
from collections import defaultdict
from collections.abc import Callable, Iterable, Sequence
from pathlib import Path

from pydantic import ValidationError

from .models.results import RunSummary
from .utils import load_json_payload

log = logging.getLogger(__name__)

MISSING = "—"
TIER_ORDER = ("small", "med", "big")

CellKey = tuple[str, str, str]


def collect_summaries(root: str | Path) -> list[RunSummary]:
    """Load every ``summary.json`` below ``root`` (or ``root`` itself when it is a file).

    Unreadable summaries are skipped with a warning.
    """
    base = Path(root)
    paths = [base] if base.is_file() else sorted(base.rglob("summary.json"))
    out: list[RunSummary] = []
    for path in paths:
        try:
            out.append(RunSummary.model_validate(load_json_payload(path)))
        except (OSError, ValueError, ValidationError) as exc:
            log.warning("skipping %s: %s", path, exc)
    return out


def _pct(value: float | None) -> str:
    return MISSING if value is None else f"{100 * value:.2f}"


def _gain(value: float | None) -> str:
    return MISSING if value is None else f"{100 * value:+.2f}"


def _median(values: Iterable[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return statistics.median(present) if present else None


def _table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(" --- " for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return lines


def _order(values: Iterable[str], preferred: Sequence[str]) -> list[str]:
    seen = set(values)
    return [v for v in preferred if v in seen] + sorted(seen - set(preferred))


def group_runs(summaries: Iterable[RunSummary]) -> dict[CellKey, list[RunSummary]]:
    """Group runs by ``(strategy, trigger, labels)``."""
    cells: dict[CellKey, list[RunSummary]] = defaultdict(list)
    for s in summaries:
        cells[(s.strategy, s.trigger, s.labels)].append(s)
    return cells


def grid_keys(cells: dict[CellKey, list[RunSummary]]) -> list[CellKey]:
    """Full grid over every strategy, trigger type and labeling scheme seen."""
    strategies = _order((k[0] for k in cells), ("joint", "rotation", "smoothed"))
    triggers = _order((k[1] for k in cells), ("noise", "content", "unrelated", "fgsm"))
    labels = _order((k[2] for k in cells), ("single", "multi"))
    return list(itertools.product(strategies, triggers, labels))


def _gain_tier(runs: Sequence[RunSummary]) -> str | None:
    tiers = _order((t for r in runs for t in r.attacks), TIER_ORDER)
    return tiers[0] if tiers else None


def render_report(summaries: Sequence[RunSummary]) -> str:
    """Render the markdown report: performance, attack and restoration, blending and extraction.

    Every cell is the median over the runs (seeds) of that grid cell; cells without runs
    show ``—``. Accuracies are percentages with two decimals; gains are percentage points.
    """
    if not summaries:
        return "# Watermark lab report\n\nNo completed runs.\n"
    cells = group_runs(summaries)
    keys = grid_keys(cells)
    tiers = _order((t for s in summaries for t in s.attacks), TIER_ORDER)
    gain_tier = _gain_tier(summaries)

    def med(runs: Sequence[RunSummary], pick: Callable[[RunSummary], float | None]) -> float | None:
        return _median(pick(r) for r in runs)

    lines = ["# Watermark lab report", "", f"{len(summaries)} run(s); cells are medians over seeds.", "", "## Performance after training and embedding", ""]
    header = ["Strategy", "Trigger", "Labels", "Runs", "Clean test", "Test", "Trigger"]
    header += [f"Attack {t}" for t in tiers]
    header += [f"Gain ({gain_tier})" if gain_tier else "Gain"]
    rows: list[list[str]] = []
    for key in keys:
        runs = cells.get(key, [])
        row = [*key, str(len(runs)) if runs else MISSING]
        row += [_pct(med(runs, lambda r: r.clean_test_acc)), _pct(med(runs, lambda r: r.embed_test_acc)), _pct(med(runs, lambda r: r.embed_trigger_acc))]
        for tier in tiers:
            row.append(_pct(med(runs, lambda r, t=tier: r.attacks[t].post_attack_trigger_acc if t in r.attacks else None)))
        row.append(_gain(med(runs, lambda r: r.attacks[gain_tier].restoration_gain if gain_tier and gain_tier in r.attacks else None)))
        rows.append(row)
    lines += _table(header, rows)

    if tiers:
        lines += ["", "## Restoration after fine-tuning", ""]
        rows = []
        for key in keys:
            runs = cells.get(key, [])
            for tier in tiers:
                picked = [r.attacks[tier] for r in runs if tier in r.attacks]
                controls = [r.control for r in runs if r.control is not None and r.control.tier == tier]
                rows.append(
                    [
                        *key,
                        tier,
                        _pct(_median(a.post_attack_trigger_acc for a in picked)),
                        _pct(_median(a.restore_max_trigger_acc for a in picked)),
                        _gain(_median(a.restoration_gain for a in picked)),
                        _gain(_median(c.restoration_gain for c in controls)),
                    ]
                )
        lines += _table(["Strategy", "Trigger", "Labels", "Tier", "After attack", "Max retrain", "Gain", "Control gain"], rows)

    if any(s.blend for s in summaries):
        lines += ["", "## Blended fine-tuning", ""]
        rows = []
        for key in keys:
            runs = [r for r in cells.get(key, []) if r.blend]
            rows.append(
                [
                    *key,
                    _pct(_median(r.blend.blended_final_trigger_acc for r in runs if r.blend)),
                    _pct(_median(r.blend.plain_final_trigger_acc for r in runs if r.blend)),
                    _pct(_median(r.blend.blended_final_test_acc for r in runs if r.blend)),
                    _pct(_median(r.blend.plain_final_test_acc for r in runs if r.blend)),
                ]
            )
        lines += _table(["Strategy", "Trigger", "Labels", "Blended trigger", "Plain trigger", "Blended test", "Plain test"], rows)

    if any(s.extract for s in summaries):
        lines += ["", "## Model extraction", ""]
        rows = []
        for key in keys:
            runs = [r for r in cells.get(key, []) if r.extract]
            rows.append(
                [
                    *key,
                    _pct(_median(r.extract.agreement for r in runs if r.extract)),
                    _pct(_median(r.extract.trigger_acc for r in runs if r.extract)),
                    _pct(_median(r.extract.retrain_max_trigger_acc for r in runs if r.extract)),
                    _gain(_median(r.extract.restoration_gain for r in runs if r.extract)),
                ]
            )
        lines += _table(["Strategy", "Trigger", "Labels", "Agreement", "Trigger", "Max retrain", "Gain"], rows)

    return "\n".join(lines) + "\n"
