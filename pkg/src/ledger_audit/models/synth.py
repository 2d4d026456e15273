"""Synthetic ledger generator configuration and outputs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, time
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.ledger_audit.models.jet import (
    DEFAULT_HIGH_CASH_PERCENTILE,
    DEFAULT_TOP_N_COUNT,
    DEFAULT_WORKING_HOURS,
    JetConfig,
)
from src.ledger_audit.models.ledger import Dataset

# First account number and spacing of the generated chart of accounts
ACCOUNT_BASE = 1000
ACCOUNT_STEP = 10


class Archetype(str, Enum):
    """Anomaly patterns the generator can inject, one per flag family."""

    LATE_PAYMENT = "late_payment"
    WEEKEND_POSTING = "weekend_posting"
    OFF_HOURS_POSTING = "off_hours_posting"
    TOP_AMOUNT = "top_amount"
    HIGH_CASH = "high_cash"


DEFAULT_ARCHETYPE_WEIGHTS: dict[Archetype, float] = {a: 0.2 for a in Archetype}


class GenConfig(BaseModel):
    """Configuration of one synthetic ledger."""

    seed: int = Field(default=0, ge=0, lt=2**64)
    n_postings: int = Field(default=5000, gt=0)
    anomaly_rate: float = Field(default=0.01, ge=0.0, lt=1.0)
    n_users: int = Field(default=25, gt=0)
    n_accounts: int = Field(default=30, gt=0)
    n_cash_accounts: int = Field(default=2, ge=1)
    date_range: tuple[date, date] = (date(2024, 1, 1), date(2024, 12, 31))
    amount_lognormal: tuple[float, float] = (5.0, 1.0)
    working_hours: tuple[time, time] = DEFAULT_WORKING_HOURS
    anomaly_archetypes: dict[Archetype, float] = Field(
        default_factory=lambda: dict(DEFAULT_ARCHETYPE_WEIGHTS)
    )
    top_n_count: int = Field(default=DEFAULT_TOP_N_COUNT, gt=0)
    high_cash_percentile: float = Field(default=DEFAULT_HIGH_CASH_PERCENTILE, gt=0.0, lt=1.0)
    currency: str = Field(default="EUR", pattern=r"^[A-Z]{3}$")

    model_config = ConfigDict(frozen=True)

    @field_validator("date_range")
    @classmethod
    def _check_dates(cls, value: tuple[date, date]) -> tuple[date, date]:
        if value[0] > value[1]:
            raise ValueError("date_range start must not be after end")
        return value

    @field_validator("amount_lognormal")
    @classmethod
    def _check_lognormal(cls, value: tuple[float, float]) -> tuple[float, float]:
        if value[1] <= 0:
            raise ValueError("lognormal sigma must be positive")
        return value

    @field_validator("anomaly_archetypes")
    @classmethod
    def _check_weights(cls, value: dict[Archetype, float]) -> dict[Archetype, float]:
        if any(w < 0 for w in value.values()):
            raise ValueError("archetype weights must be non-negative")
        if not math.isclose(sum(value.values()), 1.0, abs_tol=1e-9):
            raise ValueError("archetype weights must sum to 1")
        return {a: value[a] for a in Archetype if a in value}

    @property
    def anomaly_count(self) -> int:
        """Number of anomalous postings, rounded half up."""
        return math.floor(self.n_postings * self.anomaly_rate + 0.5)

    @property
    def account_ids(self) -> list[str]:
        return [str(ACCOUNT_BASE + ACCOUNT_STEP * i) for i in range(self.n_accounts)]

    @property
    def cash_account_ids(self) -> list[str]:
        return self.account_ids[: self.n_cash_accounts]

    @property
    def user_ids(self) -> list[str]:
        return [f"U{i + 1:03d}" for i in range(self.n_users)]

    def jet_config(self) -> JetConfig:
        """JET thresholds matching this generator's construction."""
        return JetConfig(
            working_hours=self.working_hours,
            top_n_count=self.top_n_count,
            high_cash_percentile=self.high_cash_percentile,
            cash_account_ids=tuple(self.cash_account_ids),
        )


@dataclass(frozen=True)
class LabeledDataset:
    """Generator output: a ground-truth labeled dataset and what was injected."""

    dataset: Dataset
    injected_archetypes: dict[str, frozenset[Archetype]] = field(default_factory=dict)


class DatasetSummary(BaseModel):
    """Counts describing a labeled dataset."""

    postings: int = 0
    entries: int = 0
    anomalies: int = 0
    users: int = 0
    accounts: int = 0
    archetype_histogram: dict[str, int] = Field(default_factory=dict)
