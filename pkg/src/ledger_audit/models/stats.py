"""Dataset context statistics injected into prompts."""

from __future__ import annotations

from decimal import Decimal

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DatasetStats(BaseModel):
    """Transaction-level statistics over one dataset.

    Amount fields are currency units; ``sorted_abs_amounts`` holds cents in
    ascending order for exact percentile queries.

    ``if_anomaly_count`` counts postings the forest flagged, while
    ``if_anomaly_rate`` divides it by ``total_transactions`` (ledger lines), the
    denominator the prompt shows next to it. For multi-line postings the rate
    is therefore lower than the share of flagged postings.
    """

    total_transactions: int = Field(ge=0)
    amount_mean: Decimal
    amount_median: Decimal
    amount_q95: Decimal
    amount_q99: Decimal
    amount_min: Decimal
    amount_max: Decimal
    payment_period_max: int
    total_users: int = Field(ge=0)
    total_accounts: int = Field(ge=0)
    user_tx_counts: dict[str, int] = Field(default_factory=dict)
    account_tx_counts: dict[str, int] = Field(default_factory=dict)
    sorted_abs_amounts: tuple[int, ...] = Field(default=(), repr=False)
    posting_amount_ranks: dict[str, int] = Field(default_factory=dict, repr=False)
    if_present: bool = False
    if_anomaly_count: int = Field(default=0, ge=0)
    if_anomaly_rate: float = Field(default=0.0, ge=0.0)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_invariants(self) -> "DatasetStats":
        ordered = (
            self.amount_min,
            self.amount_median,
            self.amount_q95,
            self.amount_q99,
            self.amount_max,
        )
        if any(a > b for a, b in zip(ordered, ordered[1:])):
            raise ValueError("amount statistics must satisfy min <= median <= q95 <= q99 <= max")
        if sum(self.user_tx_counts.values()) != self.total_transactions:
            raise ValueError("user transaction counts must sum to total_transactions")
        if len(self.sorted_abs_amounts) != self.total_transactions:
            raise ValueError("sorted_abs_amounts must hold one amount per transaction")
        return self
