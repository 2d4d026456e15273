"""Evaluation types: confusion counts, metric sets, reports, comparisons."""

from __future__ import annotations

from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field


class Averaging(str, Enum):
    """Metric averaging conventions."""

    POSITIVE_CLASS = "positive_class"
    MACRO = "macro"


class ConfusionCounts(BaseModel):
    """Binary confusion counts with anomaly as the positive class."""

    tp: int = Field(default=0, ge=0)
    fp: int = Field(default=0, ge=0)
    fn: int = Field(default=0, ge=0)
    tn: int = Field(default=0, ge=0)

    model_config = ConfigDict(frozen=True)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class MetricSet(BaseModel):
    """Precision, recall and F1 under one averaging convention.

    ``undefined`` is set when any ratio had a zero denominator and was
    reported as 0.
    """

    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    averaging: Averaging
    undefined: bool = False

    model_config = ConfigDict(frozen=True)


class EvalReport(BaseModel):
    """Confusion counts and both metric conventions for one method."""

    method_name: str
    variant: str
    counts: ConfusionCounts
    metrics_macro: MetricSet
    metrics_positive: MetricSet
    excluded: int = Field(default=0, ge=0)
    excluded_ids: list[str] = Field(default_factory=list)
    label_set_digest: str = ""
    label_provenance: str = "none"
    run_metadata: dict[str, Any] = Field(default_factory=dict)

    model_config = ConfigDict(frozen=True)

    def metrics(self, averaging: Averaging) -> MetricSet:
        if averaging is Averaging.MACRO:
            return self.metrics_macro
        return self.metrics_positive


class ComparisonRow(BaseModel):
    """One method in a side-by-side comparison."""

    method_name: str
    variant: str
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    excluded: int = 0
    delta_precision: float = 0.0
    delta_recall: float = 0.0
    delta_f1: float = 0.0
    delta_tp: int = 0
    delta_fp: int = 0
    delta_fn: int = 0
    delta_tn: int = 0


class ComparisonTable(BaseModel):
    """Reports over one label set, sorted by F1, with deltas vs a baseline."""

    averaging: Averaging
    baseline: str
    label_set_digest: str
    rows: list[ComparisonRow]
    notes: Optional[str] = None
