"""Tests for curve layout and SVG rendering."""

from pathlib import Path

import numpy as np
import pytest

from pywmlab.errors import RejectedInputError
from pywmlab.landscape import LandscapeGrid, Trajectory2D, symmetric_axis
from pywmlab.models import MetricsRow, Phase
from pywmlab.plots import curve_series, plot_landscape, render_plots


def _rows(run_id: str, phase: Phase, accs: list[float | None]) -> list[MetricsRow]:
    return [MetricsRow(run_id=run_id, phase=phase, epoch=e, lr=1e-4, test_acc=0.8, trigger_acc=a, train_loss=0.5) for e, a in enumerate(accs)]


def _grid() -> LandscapeGrid:
    ax = symmetric_axis(1.0, 5)
    losses = np.add.outer(ax**2, ax**2)
    return LandscapeGrid(alphas=ax, betas=ax, losses=losses, mode="pca")


def _trajectory() -> Trajectory2D:
    return Trajectory2D(
        alpha=np.array([-0.8, -0.4, -0.2, 0.0]),
        beta=np.array([0.5, 0.3, 0.1, 0.0]),
        phases=("finetune", "finetune", "retrain", "retrain"),
        epochs=(0, 1, 0, 1),
    )


def test_curve_series_lays_retrain_after_finetune() -> None:
    """Retrain epoch 0 sits on the last fine-tune epoch; rows without trigger accuracy drop out."""
    rows = _rows("r/attack-small", Phase.RETRAIN, [0.2, 0.4, 0.5]) + _rows("r/attack-small", Phase.FINETUNE, [1.0, 0.6, 0.2])
    rows += _rows("r/pretrain", Phase.PRETRAIN, [None, None])
    series = curve_series(rows)
    assert list(series) == ["r/attack-small"]
    finetune, retrain = series["r/attack-small"]
    assert finetune.phase is Phase.FINETUNE and finetune.x == (0, 1, 2)
    assert retrain.phase is Phase.RETRAIN and retrain.x == (2, 3, 4)
    assert retrain.trigger_acc == (0.2, 0.4, 0.5)


def test_landscape_svg_has_contour_and_both_paths(tmp_path: Path) -> None:
    """One SVG carries the contour and the attack and retrain trajectories."""
    path = plot_landscape(_grid(), _trajectory(), tmp_path / "landscape.svg")
    text = path.read_text(encoding="utf-8")
    for gid in ("landscape-contour", "trajectory-finetune", "trajectory-retrain"):
        assert f'id="{gid}"' in text


def test_landscape_svg_is_reproducible(tmp_path: Path) -> None:
    """Identical inputs give byte-identical files."""
    a = plot_landscape(_grid(), _trajectory(), tmp_path / "a.svg")
    b = plot_landscape(_grid(), _trajectory(), tmp_path / "b.svg")
    assert a.read_bytes() == b.read_bytes()


def test_landscape_rejects_mismatched_losses(tmp_path: Path) -> None:
    """A loss matrix that does not match the axes is refused."""
    ax = symmetric_axis(1.0, 5)
    with pytest.raises(RejectedInputError):
        plot_landscape(LandscapeGrid(alphas=ax, betas=ax, losses=np.zeros((4, 5))), None, tmp_path / "x.svg")


def test_render_plots_writes_one_file_per_chain(tmp_path: Path) -> None:
    """Each chain gets its own curve file next to the landscape."""
    rows = _rows("r/attack-small", Phase.FINETUNE, [1.0, 0.5]) + _rows("r/blend", Phase.BLEND, [1.0, 0.9])
    written = render_plots(rows, [(_grid(), None)], tmp_path)
    assert sorted(p.name for p in written) == ["landscape.svg", "trigger-attack-small.svg", "trigger-blend.svg"]


def test_render_plots_with_nothing_to_draw(tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
    """No usable rows and no grids writes nothing and warns."""
    assert render_plots(_rows("r/pretrain", Phase.PRETRAIN, [None]), [], tmp_path) == []
    assert "nothing written" in caplog.text
