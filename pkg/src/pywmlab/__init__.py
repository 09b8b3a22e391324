"""Desk-scale laboratory for backdoor watermarks: embed, attack, restore and inspect."""

import logging

from .errors import (
    DivergedTrainingError,
    FormatError,
    PipelineStageError,
    RankDeficiencyError,
    RejectedInputError,
    TriggerExposureError,
    WatermarkLabError,
)
from .models.config import ExperimentConfig, load_config
from .pipeline import Experiment, run_pipeline

# main library logger
logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

__all__ = [
    "DivergedTrainingError",
    "Experiment",
    "ExperimentConfig",
    "FormatError",
    "PipelineStageError",
    "RankDeficiencyError",
    "RejectedInputError",
    "TriggerExposureError",
    "WatermarkLabError",
    "load_config",
    "run_pipeline",
]
