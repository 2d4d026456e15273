"""Dataset context statistics for prompt augmentation.

Quantiles use the nearest-rank convention on sorted absolute amounts:
the value at index ``ceil(p * n) - 1``. ``percentile_of`` counts amounts
less than or equal to the query.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import Counter
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Optional

import structlog

from src.ledger_audit.exceptions import EmptyStats, EmptyStatsDataset
from src.ledger_audit.models.iforest import IForestResult
from src.ledger_audit.models.ledger import Dataset, PostingGroup, cents_to_decimal
from src.ledger_audit.models.stats import DatasetStats

logger = structlog.get_logger(__name__)

CENT = Decimal("0.01")
MEAN_QUANTUM = Decimal("0.0001")
RATE_QUANTUM = Decimal("0.1")


def nearest_rank_index(n: int, fraction: Fraction | float | str) -> int:
    """Index of the nearest-rank quantile in a sorted list of ``n`` values."""
    if n <= 0:
        raise EmptyStats()
    p = Fraction(str(fraction)) if not isinstance(fraction, Fraction) else fraction
    if not 0 < p <= 1:
        raise ValueError(f"quantile fraction must be in (0, 1], got {fraction}")
    return max(math.ceil(p * n), 1) - 1


def _quantile_cents(sorted_cents: tuple[int, ...], fraction: Fraction | float | str) -> int:
    return sorted_cents[nearest_rank_index(len(sorted_cents), fraction)]


def quantile(stats: DatasetStats, fraction: Fraction | float | str) -> Decimal:
    """Nearest-rank quantile of the dataset's absolute amounts.

    Raises:
        EmptyStats: If the statistics hold no amounts.
    """
    return cents_to_decimal(_quantile_cents(stats.sorted_abs_amounts, fraction))


def posting_rank_key(group: PostingGroup) -> tuple[int, str]:
    """Sort key for ranking postings by size: largest first, ties by entry_id."""
    top = group.max_amount_cents
    tie = min(e.entry_id for e in group.entries if e.amount_cents == top) if group.entries else ""
    return (-top, tie)


def rank_postings(dataset: Dataset) -> dict[str, int]:
    """1-based rank of every posting by its largest line amount."""
    ordered = sorted(dataset.groups.values(), key=posting_rank_key)
    return {group.posting_id: rank for rank, group in enumerate(ordered, start=1)}


def compute_stats(dataset: Dataset, iforest: Optional[IForestResult] = None) -> DatasetStats:
    """Compute transaction-level context statistics.

    Args:
        dataset: Non-empty dataset.
        iforest: Optional forest result; when absent the ``if_*`` fields are
            zero and ``if_present`` is False.
            ``if_anomaly_rate`` is flagged postings over ledger lines.

    Returns:
        Populated DatasetStats.

    Raises:
        EmptyStatsDataset: If the dataset holds no entries.
    """
    entries = dataset.entries
    if not entries:
        raise EmptyStatsDataset("cannot compute statistics over an empty dataset")

    sorted_cents = tuple(sorted(e.amount_cents for e in entries))
    n = len(sorted_cents)
    mean = (Decimal(sum(sorted_cents)) / Decimal(n)).scaleb(-2)

    users = Counter(e.user_id for e in entries)
    accounts = Counter(e.account_id for e in entries)

    if_count = iforest.anomaly_count if iforest is not None else 0

    stats = DatasetStats(
        total_transactions=n,
        amount_mean=mean.quantize(MEAN_QUANTUM, rounding=ROUND_HALF_UP),
        amount_median=cents_to_decimal(_quantile_cents(sorted_cents, "0.5")),
        amount_q95=cents_to_decimal(_quantile_cents(sorted_cents, "0.95")),
        amount_q99=cents_to_decimal(_quantile_cents(sorted_cents, "0.99")),
        amount_min=cents_to_decimal(sorted_cents[0]),
        amount_max=cents_to_decimal(sorted_cents[-1]),
        payment_period_max=max(e.payment_period_days for e in entries),
        total_users=len(users),
        total_accounts=len(accounts),
        user_tx_counts=dict(sorted(users.items())),
        account_tx_counts=dict(sorted(accounts.items())),
        sorted_abs_amounts=sorted_cents,
        posting_amount_ranks=rank_postings(dataset),
        if_present=iforest is not None,
        if_anomaly_count=if_count,
        if_anomaly_rate=if_count / n,
    )
    logger.debug(
        "stats_computed",
        transactions=n,
        users=stats.total_users,
        accounts=stats.total_accounts,
        if_present=stats.if_present,
    )
    return stats


def percentile_of(amount: Decimal | int | str, stats: DatasetStats) -> int:
    """Percentile rank of ``|amount|``: floor(100 * count(<= amount) / total).

    Raises:
        EmptyStats: If the statistics hold no amounts.
    """
    total = len(stats.sorted_abs_amounts)
    if total == 0:
        raise EmptyStats()
    cents = abs(Decimal(str(amount))).scaleb(2)
    count = bisect_right(stats.sorted_abs_amounts, cents)
    return (100 * count) // total


def format_amount(value: Decimal) -> str:
    """Two decimals, half-up."""
    return str(value.quantize(CENT, rounding=ROUND_HALF_UP))


def format_rate(count: int, total: int) -> str:
    """Percentage with one decimal, e.g. ``4.4%``."""
    if total == 0:
        return "0.0%"
    rate = (Decimal(100 * count) / Decimal(total)).quantize(RATE_QUANTUM, rounding=ROUND_HALF_UP)
    return f"{rate}%"


def context_block(stats: DatasetStats) -> dict[str, str]:
    """Rendered DATASET CONTEXT values keyed by template placeholder."""
    return {
        "total_transactions": str(stats.total_transactions),
        "total_if_anomalies": str(stats.if_anomaly_count),
        "if_anomaly_rate": format_rate(stats.if_anomaly_count, stats.total_transactions),
        "amount_mean": format_amount(stats.amount_mean),
        "amount_median": format_amount(stats.amount_median),
        "amount_q95": format_amount(stats.amount_q95),
        "amount_q99": format_amount(stats.amount_q99),
        "amount_min": format_amount(stats.amount_min),
        "amount_max": format_amount(stats.amount_max),
        "payment_period_max": str(stats.payment_period_max),
        "total_users": str(stats.total_users),
        "total_accounts": str(stats.total_accounts),
    }


def stats_report(stats: DatasetStats) -> dict[str, object]:
    """JSON view of the statistics for the ``stats`` subcommand.

    Placeholder-named keys carry the rendered strings used in prompts; the
    frequency tables follow under their own keys.
    """
    report: dict[str, object] = dict(context_block(stats))
    report["if_present"] = stats.if_present
    report["user_tx_counts"] = stats.user_tx_counts
    report["account_tx_counts"] = stats.account_tx_counts
    return report
