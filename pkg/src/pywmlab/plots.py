"""SVG figures: trigger-accuracy curves per chain and loss contours with trajectories.

Figures are drawn on standalone :class:`matplotlib.figure.Figure` objects (no pyplot
state) and written with a fixed SVG hash salt and no date metadata, so identical
inputs give identical files.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402

from .errors import RejectedInputError  # noqa: E402
from .landscape import LandscapeGrid, Trajectory2D  # noqa: E402
from .models.trace import MetricsRow, Phase  # noqa: E402

log = logging.getLogger(__name__)

SVG_HASH_SALT = "pywmlab"
PHASE_ORDER = (Phase.PRETRAIN, Phase.EMBED, Phase.FINETUNE, Phase.EXTRACT, Phase.BLEND, Phase.RETRAIN)
TRAJECTORY_STYLE = {
    "finetune": {"color": "tab:orange", "linestyle": "-", "marker": "o"},
    "extract": {"color": "tab:orange", "linestyle": "-", "marker": "o"},
    "retrain": {"color": "tab:blue", "linestyle": "--", "marker": "s"},
}


@dataclass(frozen=True, slots=True)
class CurveSeries:
    """One phase of a chain, placed on a shared x axis."""

    run_id: str
    phase: Phase
    x: tuple[int, ...]
    trigger_acc: tuple[float, ...]
    test_acc: tuple[float, ...]


def curve_series(rows: Iterable[MetricsRow]) -> dict[str, list[CurveSeries]]:
    """Group rows by run id and lay phases end to end in the order finetune-then-retrain.

    Each phase starts where the previous one ended, so epoch 0 of a retrain sits on the
    last fine-tune epoch. Rows without trigger accuracy are dropped.
    """
    grouped: dict[str, dict[Phase, list[MetricsRow]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        if row.trigger_acc is not None:
            grouped[row.run_id][row.phase].append(row)

    out: dict[str, list[CurveSeries]] = {}
    for run_id, phases in grouped.items():
        offset = 0
        series: list[CurveSeries] = []
        for phase in PHASE_ORDER:
            if phase not in phases:
                continue
            ordered = sorted(phases[phase], key=lambda r: r.epoch)
            x = tuple(offset + r.epoch for r in ordered)
            series.append(
                CurveSeries(
                    run_id=run_id,
                    phase=phase,
                    x=x,
                    trigger_acc=tuple(r.trigger_acc or 0.0 for r in ordered),
                    test_acc=tuple(r.test_acc for r in ordered),
                )
            )
            offset = x[-1]
        out[run_id] = series
    return out


def _save(fig: Figure, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _slug(run_id: str) -> str:
    return run_id.rsplit("/", 1)[-1].replace("/", "_") or "run"


def plot_curves(run_id: str, series: Sequence[CurveSeries], path: Path) -> Path:
    """Trigger accuracy (solid) and test accuracy (dotted) for one chain."""
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot()
    for s in series:
        (line,) = ax.plot(s.x, s.trigger_acc, label=f"{s.phase} trigger", **{k: v for k, v in TRAJECTORY_STYLE.get(str(s.phase), {}).items() if k != "marker"})
        line.set_gid(f"curve-{s.phase}")
        ax.plot(s.x, s.test_acc, linestyle=":", color=line.get_color(), label=f"{s.phase} test")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_title(run_id)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_landscape(grid: LandscapeGrid, trajectory: Trajectory2D | None, path: Path, *, levels: int = 20) -> Path:
    """Trigger-loss contours with the attack path in one style and the retrain path in another.

    Raises:
        RejectedInputError: If the loss matrix does not match the axes.
    """
    if grid.losses.shape != (grid.betas.size, grid.alphas.size):
        raise RejectedInputError(f"loss matrix {grid.losses.shape} does not match axes ({grid.betas.size}, {grid.alphas.size})")
    fig = Figure(figsize=(6.0, 5.0))
    ax = fig.add_subplot()
    filled = ax.contourf(grid.alphas, grid.betas, grid.losses, levels=levels, cmap="viridis")
    filled.set_gid("landscape-contour")
    ax.contour(grid.alphas, grid.betas, grid.losses, levels=levels, colors="k", linewidths=0.3)
    fig.colorbar(filled, ax=ax, label="trigger loss")
    if trajectory is not None and len(trajectory):
        for phase in dict.fromkeys(trajectory.phases):
            idx = [i for i, p in enumerate(trajectory.phases) if p == phase]
            style = TRAJECTORY_STYLE.get(phase, {"color": "k", "linestyle": "-", "marker": "."})
            (line,) = ax.plot(trajectory.alpha[idx], trajectory.beta[idx], markersize=3, linewidth=1.2, label=phase, **style)
            line.set_gid(f"trajectory-{phase}")
        ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("d1" if grid.mode == "pca" else "direction 1")
    ax.set_ylabel("d2" if grid.mode == "pca" else "direction 2")
    ax.set_title(f"trigger loss ({grid.mode})")
    fig.tight_layout()
    return _save(fig, path)


def render_plots(
    metrics: Sequence[MetricsRow],
    grids: Sequence[tuple[LandscapeGrid, Trajectory2D | None]],
    out_dir: str | Path,
) -> list[Path]:
    """Write one curve SVG per chain and one contour SVG per grid.

    Returns:
        Written paths; empty (with a warning) when there is nothing to draw.
    """
    out = Path(out_dir)
    chains = curve_series(metrics)
    if not chains and not grids:
        log.warning("render_plots: no metrics rows with trigger accuracy and no grids; nothing written")
        return []
    written = [plot_curves(run_id, series, out / f"trigger-{_slug(run_id)}.svg") for run_id, series in sorted(chains.items())]
    for i, (grid, trajectory) in enumerate(grids):
        name = "landscape.svg" if len(grids) == 1 else f"landscape-{i}.svg"
        written.append(plot_landscape(grid, trajectory, out / name))
    log.info("wrote %d plot(s) to %s", len(written), out)
    return written
