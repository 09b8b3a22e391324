"""Exception hierarchy for pywmlab.

All library errors derive from :class:`WatermarkLabError` so callers (and the CLI)
can catch one type. Errors that describe a bad argument also derive from
:class:`ValueError`.
"""

from __future__ import annotations

from collections.abc import Mapping
from typing import Any


class WatermarkLabError(RuntimeError):
    """Base class for every error raised by pywmlab."""


class RejectedInputError(WatermarkLabError, ValueError):
    """Raised when an operation's precondition is violated."""


class DivergedTrainingError(WatermarkLabError):
    """Raised when a loss or a parameter update stops being finite.

    Attributes:
        phase: Training phase name (e.g. ``embed``), if known.
        epoch: 1-based epoch index, if known.
        step: Global optimizer step index, if known.
    """

    def __init__(self, message: str, *, phase: str | None = None, epoch: int | None = None, step: int | None = None) -> None:
        """Initialize the error with optional training context.

        Args:
            message: Human readable description.
            phase: Training phase name.
            epoch: Epoch index.
            step: Optimizer step index.
        """
        where = ", ".join(f"{k}={v}" for k, v in (("phase", phase), ("epoch", epoch), ("step", step)) if v is not None)
        super().__init__(f"{message} ({where})" if where else message)
        self.phase = phase
        self.epoch = epoch
        self.step = step


class FormatError(WatermarkLabError, ValueError):
    """Raised for corrupt checkpoint containers or IDX files.

    Attributes:
        field: Name of the offending field (``magic``, ``version``, ``dims``...).
    """

    def __init__(self, field: str, message: str) -> None:
        """Initialize the error.

        Args:
            field: Offending field name.
            message: Description of the problem.
        """
        super().__init__(f"{field}: {message}")
        self.field = field


class TriggerExposureError(WatermarkLabError):
    """Raised when a trigger sample shows up in a batch that must stay trigger-free."""


class RankDeficiencyError(WatermarkLabError):
    """Raised when a trajectory matrix cannot span a 2D projection plane."""


class PipelineStageError(WatermarkLabError):
    """Raised when a pipeline stage fails.

    Attributes:
        stage: Name of the failing stage.
        context: Extra key/value context (run id, tier...).
    """

    def __init__(self, stage: str, cause: BaseException, context: Mapping[str, Any] | None = None) -> None:
        """Initialize the error.

        Args:
            stage: Name of the failing stage.
            cause: Original exception.
            context: Extra context.
        """
        ctx = dict(context or {})
        details = ", ".join(f"{k}={v}" for k, v in ctx.items())
        super().__init__(f"stage {stage!r} failed: {cause.__class__.__name__}: {cause}" + (f" [{details}]" if details else ""))
        self.stage = stage
        self.context = ctx
