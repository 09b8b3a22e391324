"""Per-epoch metrics rows, run traces and the metrics CSV."""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Sequence
from enum import StrEnum
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field

METRICS_SCHEMA_VERSION = 2
METRICS_COLUMNS = (
    "run_id",
    "phase",
    "epoch",
    "lr",
    "test_acc",
    "trigger_acc",
    "train_loss",
    "trigger_loss",
    "wall_ms",
    "agreement",
)


class Phase(StrEnum):
    """Training phase tags used in metrics rows."""

    PRETRAIN = "pretrain"
    EMBED = "embed"
    FINETUNE = "finetune"
    RETRAIN = "retrain"
    BLEND = "blend"
    EXTRACT = "extract"


class MetricsRow(BaseModel):
    """One evaluation row; epoch 0 is the state entering the phase.

    ``agreement`` is only filled for extraction rows: the fraction of test inputs on which the
    surrogate predicts the victim's label.
    """

    run_id: str
    phase: Phase
    epoch: int = Field(ge=0)
    lr: float = Field(ge=0)
    test_acc: float = Field(ge=0, le=1)
    trigger_acc: float | None = Field(default=None, ge=0, le=1)
    train_loss: float
    trigger_loss: float | None = None
    wall_ms: int = Field(default=0, ge=0)
    agreement: float | None = Field(default=None, ge=0, le=1)

    model_config = ConfigDict(frozen=True)


class RunTrace(BaseModel):
    """Rows of one phase of one run, plus references to saved checkpoints.

    ``snapshots`` holds flattened parameters per epoch when a trainer was asked to keep
    them; it is never serialized.
    """

    run_id: str
    phase: Phase
    rows: list[MetricsRow] = Field(default_factory=list)
    checkpoints: list[str] = Field(default_factory=list)
    snapshots: list[Any] = Field(default_factory=list, exclude=True, repr=False)

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def initial(self) -> MetricsRow:
        """Row at epoch 0."""
        return self.rows[0]

    @property
    def final(self) -> MetricsRow:
        """Row after the last epoch."""
        return self.rows[-1]

    def trigger_series(self) -> list[float]:
        """Trigger accuracy per epoch, epoch 0 included."""
        return [r.trigger_acc for r in self.rows if r.trigger_acc is not None]

    def max_trigger_acc(self) -> float | None:
        """Best trigger accuracy after epoch 0, or ``None`` without trained epochs."""
        values = [r.trigger_acc for r in self.rows[1:] if r.trigger_acc is not None]
        return max(values) if values else None

    def restoration_gain(self) -> float | None:
        """``max(trigger_acc over epochs >= 1) - trigger_acc at epoch 0``."""
        best = self.max_trigger_acc()
        start = self.rows[0].trigger_acc if self.rows else None
        if best is None or start is None:
            return None
        return best - start


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def format_metrics_rows(rows: Iterable[MetricsRow], *, header: bool) -> str:
    """Render rows in the fixed column order (floats as ``.10g``, ``None`` as empty)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(METRICS_COLUMNS)
    for row in rows:
        data = row.model_dump()
        writer.writerow([_fmt(data[col]) for col in METRICS_COLUMNS])
    return buf.getvalue()


def append_metrics_csv(path: str | Path, rows: Sequence[MetricsRow]) -> Path:
    """Append rows to ``path``, writing the header when the file is new."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    new = not p.exists() or p.stat().st_size == 0
    with p.open("a", encoding="utf-8", newline="") as fh:
        fh.write(format_metrics_rows(rows, header=new))
    return p


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    """Parse a metrics CSV back into rows."""
    out: list[MetricsRow] = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(MetricsRow.model_validate({k: (v if v != "" else None) for k, v in rec.items()}))
    return out
