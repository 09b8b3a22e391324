"""Tests for the markdown report built from run summaries."""

from pathlib import Path

import pytest

from pywmlab.models import AttackSummary, RunSummary
from pywmlab.report import MISSING, collect_summaries, render_report
from pywmlab.utils import save_json_payload


def _summary(strategy: str = "joint", trigger: str = "noise", seed: int = 0, post: float = 0.3, gain: float = 0.25) -> RunSummary:
    return RunSummary(
        run_id=f"run-mlp-{trigger}-single-{strategy}-s{seed}",
        seed=seed,
        model_kind="mlp",
        trigger=trigger,
        labels="single",
        strategy=strategy,
        clean_test_acc=0.9,
        embed_test_acc=0.88,
        embed_trigger_acc=1.0,
        attacks={
            "small": AttackSummary(
                tier="small",
                attack_lr=1e-4,
                restore_lr=1e-4,
                post_attack_trigger_acc=post,
                post_attack_test_acc=0.87,
                restore_max_trigger_acc=post + gain,
                restoration_gain=gain,
            )
        },
    )


def test_empty_report() -> None:
    """No summaries gives a report that says so."""
    assert "No completed runs." in render_report([])


def test_single_run_row() -> None:
    """Accuracies are percentages with two decimals and gains carry a sign."""
    text = render_report([_summary()])
    assert "| joint | noise | single | 1 | 90.00 | 88.00 | 100.00 | 30.00 | +25.00 |" in text
    assert "## Restoration after fine-tuning" in text
    assert "## Blended fine-tuning" not in text


def test_missing_cells_and_medians() -> None:
    """Grid cells without runs show the missing marker; seeds collapse to their median."""
    runs = [_summary(seed=s, post=p) for s, p in enumerate([0.1, 0.5, 0.3])] + [_summary(strategy="rotation", trigger="content")]
    text = render_report(runs)
    assert "| joint | noise | single | 3 | 90.00 | 88.00 | 100.00 | 30.00 | +25.00 |" in text
    assert f"| joint | content | single | {MISSING} | {MISSING} |" in text


def test_collect_summaries_skips_broken_files(tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
    """Valid summaries load; unreadable ones are skipped with a warning."""
    save_json_payload(_summary().model_dump(mode="json"), tmp_path / "a" / "summary.json")
    (tmp_path / "b").mkdir()
    (tmp_path / "b" / "summary.json").write_text("{not json", encoding="utf-8")
    summaries = collect_summaries(tmp_path)
    assert [s.strategy for s in summaries] == ["joint"]
    assert "skipping" in caplog.text
