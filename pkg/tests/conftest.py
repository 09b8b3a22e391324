"""Pytest configuration and shared fixtures.

This module contains pytest configuration settings and shared fixtures
used across the test suite. Full-size experiment runs are marked ``slow``
and only run with ``--run-slow``.
"""

from pathlib import Path

import numpy as np
import pytest

from pywmlab.data.dataset import LabeledDataset
from pywmlab.data.synth import SynthSpec, synth_generate
from pywmlab.models.config import ExperimentConfig, config_from_mapping
from pywmlab.nn import Model, ModelSpec


def pytest_addoption(parser: pytest.Parser) -> None:
    """Register ``--run-slow``."""
    parser.addoption("--run-slow", action="store_true", default=False, help="run full-size experiment tests")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    """Skip ``slow`` tests unless ``--run-slow`` is given."""
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def anyio_backend() -> str:
    """Configure asyncio as the async backend for tests.

    Returns:
        str: The async backend name to use for testing.
    """
    return "asyncio"


@pytest.fixture
def tiny_dataset() -> LabeledDataset:
    """A small synthetic 10-class dataset (12x12 grayscale)."""
    return synth_generate(SynthSpec(num_classes=10, per_class=12, image_size=12), seed=3)


@pytest.fixture
def tiny_mlp() -> Model:
    """A small MLP matching :func:`tiny_dataset`."""
    return Model.init(ModelSpec.mlp((12, 12, 1), 10, widths=(16, 12)), seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    """Deterministic generator for test inputs."""
    return np.random.default_rng(1234)


def tiny_config(out_dir: Path, **sections: dict[str, object]) -> ExperimentConfig:
    """A config small enough for an end-to-end run in a few seconds."""
    data: dict[str, dict[str, object]] = {
        "experiment": {"seed": 0, "out_dir": str(out_dir), "workers": 1},
        "data": {"per_class": 60, "image_size": 12, "test_size": 100, "trigger_size": 20, "ood_per_class": 4},
        "model": {"kind": "mlp", "widths": [16, 12]},
        "triggers": {"type": "noise", "labels": "single"},
        "pretrain": {"enabled": True, "epochs": 2, "batch_size": 32},
        "embed": {"epochs": 3, "batch_size": 32},
        "attack": {"tiers": ["small"], "epochs": 2, "batch_size": 32},
        "restore": {"epochs": 2, "batch_size": 32},
        "blend": {"enabled": False},
        "extract": {"enabled": False},
        "landscape": {"enabled": False},
    }
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return config_from_mapping(data)
