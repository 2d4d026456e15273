"""Journal entry testing flag types."""

from __future__ import annotations

from datetime import time

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Minimum number of triggered flags for an anomaly verdict
TRIGGER_THRESHOLD = 2

DEFAULT_WORKING_HOURS = (time(8, 0), time(18, 0))
DEFAULT_TOP_N_COUNT = 50
DEFAULT_HIGH_CASH_PERCENTILE = 0.95
DEFAULT_CASH_ACCOUNT_IDS = ("1000", "1010")


class JetFlags(BaseModel):
    """The five engineered flags of one posting and the rule verdict.

    Encodings:
        promptly: 1 = 0-9 days, 2 = 10-29 days, 3 = 30+ days
        weekend: 0 = Mon-Fri, 1 = Saturday, 2 = Sunday
        nwh, top_n, high_cash: 0 = not triggered, 1 = triggered
    """

    posting_id: str
    promptly: int = Field(ge=1, le=3)
    weekend: int = Field(ge=0, le=2)
    nwh: int = Field(ge=0, le=1)
    top_n: int = Field(ge=0, le=1)
    high_cash: int = Field(ge=0, le=1)
    triggered_count: int = Field(ge=0, le=5)
    verdict: int = Field(ge=0, le=1)
    # Fields absent from the input that forced a flag to "not triggered"
    missing_fields: tuple[str, ...] = ()

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_consistency(self) -> "JetFlags":
        expected = count_triggered(
            self.promptly, self.weekend, self.nwh, self.top_n, self.high_cash
        )
        if self.triggered_count != expected:
            raise ValueError(f"triggered_count {self.triggered_count} != {expected}")
        if self.verdict != int(expected >= TRIGGER_THRESHOLD):
            raise ValueError("verdict must be 1 iff two or more flags are triggered")
        return self

    @classmethod
    def from_values(
        cls,
        posting_id: str,
        promptly: int,
        weekend: int,
        nwh: int,
        top_n: int,
        high_cash: int,
        missing_fields: tuple[str, ...] = (),
    ) -> "JetFlags":
        """Build flags, deriving the triggered count and the verdict."""
        triggered = count_triggered(promptly, weekend, nwh, top_n, high_cash)
        return cls(
            posting_id=posting_id,
            promptly=promptly,
            weekend=weekend,
            nwh=nwh,
            top_n=top_n,
            high_cash=high_cash,
            triggered_count=triggered,
            verdict=int(triggered >= TRIGGER_THRESHOLD),
            missing_fields=missing_fields,
        )

    def feature_values(self) -> dict[str, int]:
        """The five flag values in prompt order."""
        return {
            "promptly": self.promptly,
            "weekend": self.weekend,
            "nwh": self.nwh,
            "top_n": self.top_n,
            "high_cash": self.high_cash,
        }


def count_triggered(promptly: int, weekend: int, nwh: int, top_n: int, high_cash: int) -> int:
    """Count triggered flags under the flag rules."""
    return (
        int(promptly in (2, 3))
        + int(weekend in (1, 2))
        + int(nwh == 1)
        + int(top_n == 1)
        + int(high_cash == 1)
    )


class JetConfig(BaseModel):
    """Thresholds for the dataset-relative and time-of-day flags.

    Working hours are the half-open interval [start, end).
    """

    working_hours: tuple[time, time] = DEFAULT_WORKING_HOURS
    top_n_count: int = Field(default=DEFAULT_TOP_N_COUNT, gt=0)
    high_cash_percentile: float = Field(default=DEFAULT_HIGH_CASH_PERCENTILE, gt=0.0, lt=1.0)
    cash_account_ids: tuple[str, ...] = DEFAULT_CASH_ACCOUNT_IDS

    model_config = ConfigDict(frozen=True)

    @field_validator("working_hours")
    @classmethod
    def _check_window(cls, value: tuple[time, time]) -> tuple[time, time]:
        start, end = value
        if not start < end:
            raise ValueError("working hours start must be before end")
        return value

    @field_validator("cash_account_ids")
    @classmethod
    def _normalize_cash_accounts(cls, value: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(sorted(set(value)))
