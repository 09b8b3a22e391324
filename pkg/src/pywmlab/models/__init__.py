"""Pydantic records: metrics rows, run traces and results.

The experiment configuration lives in :mod:`pywmlab.models.config`; it is not
re-exported here because it depends on the stage modules.
"""

from .results import AttackSummary, BlendSummary, ControlSummary, ExtractSummary, LandscapeSummary, RunSummary, VerifyResult
from .trace import METRICS_COLUMNS, METRICS_SCHEMA_VERSION, MetricsRow, Phase, RunTrace, append_metrics_csv, read_metrics_csv

__all__ = [
    "METRICS_COLUMNS",
    "METRICS_SCHEMA_VERSION",
    "AttackSummary",
    "BlendSummary",
    "ControlSummary",
    "ExtractSummary",
    "LandscapeSummary",
    "MetricsRow",
    "Phase",
    "RunSummary",
    "RunTrace",
    "VerifyResult",
    "append_metrics_csv",
    "read_metrics_csv",
]
