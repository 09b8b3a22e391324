"""Procedural image datasets so the lab runs without downloads.

Family ``main`` draws one oriented bar plus one blob per image; both the bar angle and
the blob position are class-specific. Family ``ood`` draws rings and gratings instead,
which never occur in ``main`` and stand in for an unrelated source dataset.
"""

from __future__ import annotations

import math
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

from ..utils import derive_seed
from .dataset import LabeledDataset

NOISE_STD = 0.05


class SynthSpec(BaseModel):
    """Shape of a synthetic dataset."""

    num_classes: int = Field(default=10, ge=2)
    per_class: int = Field(default=600, ge=1)
    family: Literal["main", "ood"] = "main"
    image_size: int = Field(default=28, ge=12)

    model_config = ConfigDict(frozen=True)


def _grid(size: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy, xx


def _bar(yy: NDArray[np.float64], xx: NDArray[np.float64], cy: float, cx: float, angle: float, length: float) -> NDArray[np.float64]:
    dy, dx = yy - cy, xx - cx
    along = dx * math.cos(angle) + dy * math.sin(angle)
    across = -dx * math.sin(angle) + dy * math.cos(angle)
    return np.exp(-(across**2) / 1.2) * (np.abs(along) <= length / 2)


def _blob(yy: NDArray[np.float64], xx: NDArray[np.float64], cy: float, cx: float, sigma: float) -> NDArray[np.float64]:
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))


def _main_image(k: int, num_classes: int, size: int, rng: np.random.Generator) -> NDArray[np.float64]:
    yy, xx = _grid(size)
    mid = (size - 1) / 2
    angle = math.pi * k / num_classes + rng.uniform(-0.08, 0.08)
    cy, cx = mid + rng.uniform(-1.5, 1.5), mid + rng.uniform(-1.5, 1.5)
    img = rng.uniform(0.7, 1.0) * _bar(yy, xx, cy, cx, angle, length=size * 0.55)
    phi = 2 * math.pi * k / num_classes
    by = mid + size * 0.33 * math.sin(phi) + rng.uniform(-1.0, 1.0)
    bx = mid + size * 0.33 * math.cos(phi) + rng.uniform(-1.0, 1.0)
    img = np.maximum(img, rng.uniform(0.7, 1.0) * _blob(yy, xx, by, bx, sigma=size / 14))
    return img


def _ood_image(k: int, num_classes: int, size: int, rng: np.random.Generator) -> NDArray[np.float64]:
    yy, xx = _grid(size)
    mid = (size - 1) / 2
    cy, cx = mid + rng.uniform(-2.0, 2.0), mid + rng.uniform(-2.0, 2.0)
    if k % 2 == 0:
        radius = size * (0.15 + 0.25 * (k / max(num_classes - 1, 1))) + rng.uniform(-0.5, 0.5)
        r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        img = np.exp(-((r - radius) ** 2) / 1.5)
    else:
        freq = (1 + k // 2) * 2 * math.pi / size
        theta = math.pi * k / num_classes + rng.uniform(-0.1, 0.1)
        phase = rng.uniform(0, 2 * math.pi)
        img = 0.5 + 0.5 * np.sin(freq * ((xx - cx) * math.cos(theta) + (yy - cy) * math.sin(theta)) + phase)
    return rng.uniform(0.6, 1.0) * img


def synth_generate(spec: SynthSpec, seed: int) -> LabeledDataset:
    """Generate ``num_classes * per_class`` images, shuffled, deterministic in ``seed``.

    Example:
        >>> len(synth_generate(SynthSpec(num_classes=10, per_class=100), seed=0))
        1000
    """
    rng = np.random.default_rng(derive_seed(seed, "synth", spec.family))
    draw = _main_image if spec.family == "main" else _ood_image
    total = spec.num_classes * spec.per_class
    samples = np.empty((total, spec.image_size, spec.image_size, 1), dtype=np.float32)
    labels = np.repeat(np.arange(spec.num_classes, dtype=np.int64), spec.per_class)
    for i, k in enumerate(labels):
        img = draw(int(k), spec.num_classes, spec.image_size, rng)
        img = img + rng.normal(0.0, NOISE_STD, size=img.shape)
        samples[i, ..., 0] = np.clip(img, 0.0, 1.0)
    order = rng.permutation(total)
    return LabeledDataset.from_arrays(
        samples[order],
        labels[order],
        spec.num_classes,
        name=f"synth-{spec.family}",
        provenance=f"synthetic:{spec.family}:seed={seed}",
    )
