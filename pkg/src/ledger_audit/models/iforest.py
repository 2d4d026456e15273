"""Isolation forest configuration and results."""

from __future__ import annotations

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class FeatureName(str, Enum):
    """Per-posting features the forest can be fitted on."""

    LOG_MAX_AMOUNT = "log_max_amount"
    PAYMENT_PERIOD = "payment_period"
    POSTING_HOUR = "posting_hour"
    WEEKDAY = "weekday"
    LOG_USER_POSTINGS = "log_user_postings"
    LOG_ACCOUNT_POSTINGS = "log_account_postings"
    TAX_RATE = "tax_rate"


DEFAULT_FEATURES: tuple[FeatureName, ...] = tuple(FeatureName)


class Decision(str, Enum):
    NORMAL = "Normal"
    ANOMALY = "Anomaly"


class IForestConfig(BaseModel):
    """Forest hyperparameters.

    Exactly one of ``contamination`` (fraction flagged) and
    ``score_threshold`` (absolute cut-off) decides the threshold.
    """

    n_trees: int = Field(default=100, gt=0)
    subsample_size: int = Field(default=256, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    contamination: Optional[float] = Field(default=0.05, gt=0.0, lt=1.0)
    score_threshold: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    feature_spec: tuple[FeatureName, ...] = DEFAULT_FEATURES

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _one_threshold_rule(self) -> "IForestConfig":
        if (self.contamination is None) == (self.score_threshold is None):
            raise ValueError("set exactly one of contamination and score_threshold")
        if not self.feature_spec:
            raise ValueError("feature_spec must name at least one feature")
        return self


class IForestResult(BaseModel):
    """Scores and decisions for every posting of one fit.

    A posting is Anomaly iff its score is at or above ``threshold_used``.
    When ``tie_cutoff`` is set, postings scoring exactly ``threshold_used``
    are Anomaly only up to that posting_id in lexicographic order.
    """

    scores: dict[str, float]
    decisions: dict[str, Decision]
    threshold_used: float
    subsample_size: int
    dropped_features: tuple[FeatureName, ...] = ()
    tie_cutoff: Optional[str] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_decisions(self) -> "IForestResult":
        if set(self.decisions) != set(self.scores):
            raise ValueError("decisions and scores must cover the same postings")
        for pid, decision in self.decisions.items():
            if (decision is Decision.ANOMALY) != self.above_threshold(pid):
                raise ValueError(f"decision of {pid!r} disagrees with threshold_used")
        return self

    def above_threshold(self, posting_id: str) -> bool:
        """Whether the threshold rule, with the tie cutoff, flags the posting."""
        score = self.scores[posting_id]
        if score != self.threshold_used:
            return score > self.threshold_used
        return self.tie_cutoff is None or posting_id <= self.tie_cutoff

    @property
    def anomaly_count(self) -> int:
        return sum(1 for d in self.decisions.values() if d is Decision.ANOMALY)

    def is_anomaly(self, posting_id: str) -> bool:
        return self.decisions[posting_id] is Decision.ANOMALY
