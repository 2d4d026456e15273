"""Journal entry testing flags and the two-or-more-flags decision rule."""

from __future__ import annotations

from typing import Optional, Sequence

import structlog

from src.ledger_audit.core.context_stats import compute_stats, quantile
from src.ledger_audit.exceptions import MissingContext
from src.ledger_audit.models.jet import JetConfig, JetFlags
from src.ledger_audit.models.ledger import Dataset, LabelProvenance, PostingGroup
from src.ledger_audit.models.stats import DatasetStats

logger = structlog.get_logger(__name__)

FLAG_COLUMNS: tuple[str, ...] = (
    "posting_id",
    "promptly",
    "weekend",
    "nwh",
    "top_n",
    "high_cash",
    "triggered",
    "verdict",
)

# Payment period bucket boundaries in days
PROMPTLY_MEDIUM_DAYS = 10
PROMPTLY_LONG_DAYS = 30

SATURDAY = 5
SUNDAY = 6


def promptly_bucket(period_days: int) -> int:
    """1 = 0-9 days, 2 = 10-29 days, 3 = 30+ days. Early postings fall in 1."""
    if period_days >= PROMPTLY_LONG_DAYS:
        return 3
    if period_days >= PROMPTLY_MEDIUM_DAYS:
        return 2
    return 1


def weekend_code(weekday: int) -> int:
    if weekday == SUNDAY:
        return 2
    if weekday == SATURDAY:
        return 1
    return 0


def compute_flags(
    group: PostingGroup,
    config: JetConfig,
    context: Optional[DatasetStats],
) -> JetFlags:
    """Compute the five flags of one posting group.

    A flag is triggered for the group when any line triggers it. Lines
    without ``posting_time`` never trigger ``nwh``; the gap is recorded in
    ``missing_fields``.

    Args:
        group: Posting group to test.
        config: Thresholds.
        context: Statistics over the dataset that contains ``group``.

    Returns:
        JetFlags with triggered count and verdict.

    Raises:
        MissingContext: If ``context`` is absent or does not rank the group.
    """
    if context is None:
        raise MissingContext("top_n")

    start, end = config.working_hours
    missing: list[str] = []

    times = [e.posting_time for e in group.entries]
    if any(t is None for t in times):
        missing.append("posting_time")
    nwh = int(any(t is not None and not (start <= t < end) for t in times))

    weekend = max((weekend_code(e.posting_date.weekday()) for e in group.entries), default=0)

    rank = context.posting_amount_ranks.get(group.posting_id)
    if rank is None:
        raise MissingContext("top_n")
    top_n = int(rank <= config.top_n_count)

    if context.total_transactions == 0:
        raise MissingContext("high_cash")
    threshold = quantile(context, config.high_cash_percentile)
    cash_accounts = set(config.cash_account_ids)
    high_cash = int(
        any(e.account_id in cash_accounts and e.amount > threshold for e in group.entries)
    )

    return JetFlags.from_values(
        posting_id=group.posting_id,
        promptly=promptly_bucket(group.payment_period_max),
        weekend=weekend,
        nwh=nwh,
        top_n=top_n,
        high_cash=high_cash,
        missing_fields=tuple(missing),
    )


def flag_table(
    dataset: Dataset,
    config: JetConfig,
    stats: Optional[DatasetStats] = None,
) -> list[JetFlags]:
    """Flags for every posting in dataset order.

    Statistics are computed from ``dataset`` when not supplied.
    """
    if not dataset.groups:
        return []
    stats = stats or compute_stats(dataset)
    if config.top_n_count > len(dataset.groups):
        logger.warning(
            "top_n_count_clamped",
            top_n_count=config.top_n_count,
            postings=len(dataset.groups),
        )
    flags = [compute_flags(group, config, stats) for group in dataset.groups.values()]
    missing_time = sum(1 for f in flags if "posting_time" in f.missing_fields)
    logger.info(
        "jet_flags_computed",
        postings=len(flags),
        flagged=sum(f.verdict for f in flags),
        missing_posting_time=missing_time,
    )
    return flags


def pseudo_label(
    dataset: Dataset,
    config: JetConfig,
    stats: Optional[DatasetStats] = None,
) -> Dataset:
    """Label every posting with its JET verdict.

    Existing labels are ignored and replaced.
    """
    verdicts = {f.posting_id: f.verdict for f in flag_table(dataset, config, stats)}
    return dataset.with_labels(verdicts, LabelProvenance.JET_PSEUDO_LABEL)


def flag_rows(flags: Sequence[JetFlags]) -> list[tuple[object, ...]]:
    """CSV rows matching ``FLAG_COLUMNS``."""
    return [
        (
            f.posting_id,
            f.promptly,
            f.weekend,
            f.nwh,
            f.top_n,
            f.high_cash,
            f.triggered_count,
            f.verdict,
        )
        for f in flags
    ]
