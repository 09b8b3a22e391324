"""Trigger-loss surfaces and projected optimization trajectories.

Two ways to pick the plane:

- ``pca``: top-2 singular directions of the uncentered checkpoint offsets from the final model.
  Contour and trajectory share this plane.
- ``random``: seeded Gaussian directions, filter-normalized against the center model.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from sklearn.decomposition import TruncatedSVD

from .data import LabeledDataset
from .errors import RankDeficiencyError, RejectedInputError
from .nn import Model, ModelSpec, flatten_params, mean_loss, unflatten_params
from .nn.model import ParamDict
from .utils import rng_for

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
ORTHO_TOL = 1e-6
Direction = Mapping[str, NDArray[np.floating]] | NDArray[np.floating]


def _as_params(spec: ModelSpec, direction: Direction) -> ParamDict:
    if isinstance(direction, np.ndarray):
        return unflatten_params(spec, direction, dtype=np.float64)
    return {k: np.asarray(direction[k], dtype=np.float64) for k in spec.param_shapes}


def _as_vector(direction: Direction) -> NDArray[np.float64]:
    if isinstance(direction, np.ndarray):
        return direction.astype(np.float64).ravel()
    return flatten_params({k: np.asarray(v, dtype=np.float64) for k, v in direction.items()}).astype(np.float64)


def random_direction(center: Model, seed: int) -> ParamDict:
    """Seeded standard-normal direction shaped like ``center``'s parameters."""
    rng = rng_for(seed, "directions")
    return {k: rng.standard_normal(v.shape) for k, v in center.params.items()}


def _filters(arr: NDArray[np.float64]) -> NDArray[np.float64]:
    # weights: one filter per output unit (first axis); biases: one filter
    return arr.reshape(1, -1) if arr.ndim <= 1 else arr.reshape(arr.shape[0], -1)


def filter_normalize(raw: Mapping[str, NDArray[np.floating]], center: Model, *, seed: int = 0) -> ParamDict:
    """Rescale each filter of ``raw`` to the norm of the matching filter of ``center``.

    A zero center filter gives a zero direction filter. A zero raw filter (with a
    nonzero center filter) is redrawn from a seeded normal source first.

    Raises:
        RejectedInputError: If names or shapes disagree.
    """
    out: ParamDict = {}
    for name, theta in center.params.items():
        if name not in raw or np.shape(raw[name]) != theta.shape:
            raise RejectedInputError(f"direction parameter {name!r} missing or misshaped")
        d = _filters(np.array(raw[name], dtype=np.float64))
        t = _filters(theta.astype(np.float64))
        for f in range(d.shape[0]):
            t_norm = float(np.linalg.norm(t[f]))
            if t_norm == 0.0:
                d[f] = 0.0
                continue
            attempt = 0
            while float(np.linalg.norm(d[f])) == 0.0:
                d[f] = rng_for(seed, "redraw", name, f, attempt).standard_normal(d[f].shape)
                attempt += 1
            d[f] *= t_norm / float(np.linalg.norm(d[f]))
        out[name] = d.reshape(theta.shape)
    return out


@dataclass(frozen=True, slots=True, eq=False)
class PcaBasis:
    """Orthonormal plane spanned by the top two principal components."""

    d1: NDArray[np.float64]
    d2: NDArray[np.float64]
    explained_variance: tuple[float, float]

    @property
    def explained_total(self) -> float:
        """Share of the squared offsets held by the plane."""
        return float(sum(self.explained_variance))


def _sign_fix(v: NDArray[np.float64]) -> NDArray[np.float64]:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def pca_directions(
    checkpoints: Sequence[NDArray[np.floating]],
    final: NDArray[np.floating],
    *,
    allow_rank_one: bool = False,
) -> PcaBasis:
    """Top-2 singular directions of the offsets ``theta_i - theta_final``.

    The offsets are not mean-centered, so the plane passes through the final model the grid
    is centered on. Each direction has its first nonzero coordinate positive, and
    ``explained_variance`` holds each direction's share of the squared offset norm.

    Args:
        checkpoints: Flattened parameter vectors, at least three.
        final: Flattened final parameters.
        allow_rank_one: Accept a one-dimensional trajectory (the second direction is then
            an arbitrary unit vector orthogonal to the first).

    Raises:
        RejectedInputError: With fewer than three checkpoints or mismatched sizes.
        RankDeficiencyError: When the offsets span fewer than two dimensions.
    """
    if len(checkpoints) < 3:
        raise RejectedInputError(f"need at least 3 checkpoints, got {len(checkpoints)}")
    ref = np.asarray(final, dtype=np.float64).ravel()
    rows = np.stack([np.asarray(c, dtype=np.float64).ravel() - ref for c in checkpoints])
    if rows.shape[1] != ref.size:
        raise RejectedInputError("checkpoint sizes do not match the final parameters")
    energy = float(np.sum(rows**2))
    if np.sqrt(energy) <= RANK_TOL:
        raise RankDeficiencyError("trajectory has rank 0: every checkpoint equals the final model")
    # a sketch as wide as the row count makes the randomized solver exact
    svd = TruncatedSVD(n_components=2, algorithm="randomized", n_oversamples=rows.shape[0], random_state=0)
    svd.fit(rows)
    sv = svd.singular_values_
    if sv[1] <= RANK_TOL * sv[0]:
        if not allow_rank_one:
            raise RankDeficiencyError(f"trajectory has rank 1: second singular value {sv[1]:.3e} vs first {sv[0]:.3e}")
        log.warning("accepting rank-one trajectory; second direction is arbitrary")
    d1 = _sign_fix(svd.components_[0].astype(np.float64))
    d2 = _sign_fix(svd.components_[1].astype(np.float64))
    basis = PcaBasis(d1=d1, d2=d2, explained_variance=(float(sv[0] ** 2 / energy), float(sv[1] ** 2 / energy)))
    log.info("PCA plane holds %.2f%% of the trajectory's squared offsets", 100 * basis.explained_total)
    return basis


@dataclass(frozen=True, slots=True, eq=False)
class Trajectory2D:
    """Projected checkpoints in order, with phase and epoch tags."""

    alpha: NDArray[np.float64]
    beta: NDArray[np.float64]
    phases: tuple[str, ...]
    epochs: tuple[int, ...]

    def __len__(self) -> int:
        """Number of projected points."""
        return int(self.alpha.shape[0])

    def endpoint(self, phase: str) -> tuple[float, float] | None:
        """Last point of ``phase``, if present."""
        idx = [i for i, p in enumerate(self.phases) if p == phase]
        if not idx:
            return None
        return float(self.alpha[idx[-1]]), float(self.beta[idx[-1]])

    def to_csv(self, path: str | Path) -> Path:
        """Write ``epoch,phase,alpha,beta`` rows."""
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "phase", "alpha", "beta"))
            for e, ph, a, b in zip(self.epochs, self.phases, self.alpha, self.beta, strict=True):
                w.writerow((e, ph, format(float(a), ".10g"), format(float(b), ".10g")))
        return p


def _check_orthonormal(d1: NDArray[np.float64], d2: NDArray[np.float64]) -> None:
    if abs(float(np.linalg.norm(d1)) - 1) > ORTHO_TOL or abs(float(np.linalg.norm(d2)) - 1) > ORTHO_TOL:
        raise RejectedInputError("projection directions must have unit norm")
    if abs(float(d1 @ d2)) > ORTHO_TOL:
        raise RejectedInputError("projection directions must be orthogonal")


def project_trajectory(
    checkpoints: Sequence[NDArray[np.floating]],
    d1: Direction,
    d2: Direction,
    final: NDArray[np.floating],
    *,
    phases: Sequence[str] | None = None,
    epochs: Sequence[int] | None = None,
) -> Trajectory2D:
    """Project ``theta_i - theta_final`` onto the orthonormal pair ``(d1, d2)``.

    Raises:
        RejectedInputError: If the directions are not orthonormal or tags are misaligned.
    """
    v1, v2 = _as_vector(d1), _as_vector(d2)
    _check_orthonormal(v1, v2)
    n = len(checkpoints)
    tags = tuple(phases) if phases is not None else ("finetune",) * n
    eps = tuple(epochs) if epochs is not None else tuple(range(n))
    if len(tags) != n or len(eps) != n:
        raise RejectedInputError("phase/epoch tags must match the checkpoints")
    ref = np.asarray(final, dtype=np.float64).ravel()
    offsets = np.stack([np.asarray(c, dtype=np.float64).ravel() - ref for c in checkpoints]) if n else np.zeros((0, ref.size))
    return Trajectory2D(alpha=offsets @ v1, beta=offsets @ v2, phases=tags, epochs=eps)


@dataclass(frozen=True, slots=True, eq=False)
class LandscapeGrid:
    """Trigger loss over ``center + alpha * d1 + beta * d2``; ``losses[j, i]`` is at ``(alphas[i], betas[j])``."""

    alphas: NDArray[np.float64]
    betas: NDArray[np.float64]
    losses: NDArray[np.float64]
    mode: str = "pca"

    @property
    def center_loss(self) -> float:
        """Loss at the cell nearest ``(0, 0)``."""
        return self.cell_loss(0.0, 0.0)

    def cell_loss(self, alpha: float, beta: float) -> float:
        """Loss of the grid cell nearest to ``(alpha, beta)``."""
        i = int(np.argmin(np.abs(self.alphas - alpha)))
        j = int(np.argmin(np.abs(self.betas - beta)))
        return float(self.losses[j, i])

    def to_csv(self, path: str | Path) -> Path:
        """Write ``alpha,beta,loss`` rows, alpha varying fastest."""
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("alpha", "beta", "loss"))
            for j, b in enumerate(self.betas):
                for i, a in enumerate(self.alphas):
                    w.writerow((format(float(a), ".10g"), format(float(b), ".10g"), format(float(self.losses[j, i]), ".10g")))
        return p


def symmetric_axis(span: float, resolution: int) -> NDArray[np.float64]:
    """``resolution`` points over ``[-span, span]``, exactly antisymmetric (odd sizes hit 0 exactly)."""
    if resolution < 2:
        raise RejectedInputError(f"resolution must be >= 2, got {resolution}")
    ax = np.linspace(-span, span, resolution)
    return (ax - ax[::-1]) / 2


def loss_grid(
    center: Model,
    d1: Direction,
    d2: Direction,
    trigger_set: LabeledDataset,
    *,
    span: float = 1.0,
    resolution: int = 41,
    workers: int = 1,
    mode: str = "pca",
) -> LandscapeGrid:
    """Mean trigger cross-entropy on a ``resolution x resolution`` grid around ``center``.

    Cells may be evaluated on ``workers`` threads; each result lands at its own index.
    """
    p1, p2 = _as_params(center.spec, d1), _as_params(center.spec, d2)
    base = {k: v.astype(np.float64) for k, v in center.params.items()}
    alphas = symmetric_axis(span, resolution)
    betas = symmetric_axis(span, resolution)
    cells = [(j, i) for j in range(resolution) for i in range(resolution)]

    def one(cell: tuple[int, int]) -> float:
        j, i = cell
        a, b = alphas[i], betas[j]
        params = {k: (base[k] + a * p1[k] + b * p2[k]).astype(center.params[k].dtype) for k in base}
        return mean_loss(Model(center.spec, params), trigger_set)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(one, cells))
    else:
        values = [one(c) for c in cells]
    losses = np.asarray(values, dtype=np.float64).reshape(resolution, resolution)
    log.info("loss grid %dx%d (%s) evaluated; center loss %.4f", resolution, resolution, mode, losses[resolution // 2, resolution // 2])
    return LandscapeGrid(alphas=alphas, betas=betas, losses=losses, mode=mode)
