"""Deterministic synthetic ledger generator with anomaly injection.

Every anomalous posting receives two archetypes from distinct flag
families, so the two-or-more-flags rule fires on it by construction.
Normal postings keep their payment period under ten days, their posting
date on a weekday and their posting time inside working hours; only the
dataset-relative flags can fire on them, and the generator repairs
postings where both would.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, time, timedelta
from decimal import Decimal
from typing import Optional

import numpy as np
import structlog

from src.ledger_audit.core.jet_rules import flag_table
from src.ledger_audit.exceptions import InfeasibleConfig
from src.ledger_audit.models.ledger import (
    CDFlag,
    Dataset,
    JournalEntry,
    LabelProvenance,
)
from src.ledger_audit.models.synth import (
    Archetype,
    DatasetSummary,
    GenConfig,
    LabeledDataset,
)

logger = structlog.get_logger(__name__)

TAX_RATES: tuple[Decimal, ...] = (Decimal("0"), Decimal("7"), Decimal("19"))

MEMOS: tuple[str, ...] = (
    "Office supplies",
    "Consulting services",
    "Monthly rent",
    "Travel expenses",
    "Software license",
    "Customer payment",
    "Supplier invoice",
    "Utilities",
    "Payroll accrual",
    "Freight and shipping",
    "",
)

# Probability that a normal line books against a cash account
CASH_LINE_PROBABILITY = 0.1

NORMAL_PERIOD_DAYS = (0, 9)
LATE_PERIOD_DAYS = (10, 60)
TOP_AMOUNT_FACTOR = (3.0, 10.0)
HIGH_CASH_FACTOR = (1.5, 2.5)

MINUTES_PER_DAY = 24 * 60


@dataclass
class _Line:
    cd_flag: CDFlag
    amount_cents: int
    account_id: str
    tax_rate: Optional[Decimal]
    memo: str


@dataclass
class _Posting:
    posting_id: str
    posting_date: date
    posting_time: time
    period_days: int
    user_id: str
    archetypes: frozenset[Archetype] = frozenset()
    lines: list[_Line] = field(default_factory=list)
    # Amount multiplier drawn for large-amount anomalies
    factor: float = 0.0

    @property
    def is_anomaly(self) -> bool:
        return bool(self.archetypes)


def _minutes(value: time) -> int:
    return value.hour * 60 + value.minute


def _as_time(minutes: int) -> time:
    return time(minutes // 60, minutes % 60)


class SyntheticLedgerGenerator:
    """Builds one labeled ledger from a GenConfig.

    All randomness flows from ``numpy.random.default_rng(config.seed)``.
    """

    def __init__(self, config: GenConfig) -> None:
        self.config = config
        self.rng = np.random.default_rng(config.seed)

        start, end = config.date_range
        days = [start + timedelta(days=i) for i in range((end - start).days + 1)]
        self.weekdays = [d for d in days if d.weekday() < 5]
        self.weekend_days = [d for d in days if d.weekday() >= 5]

        self.work_start = _minutes(config.working_hours[0])
        self.work_end = _minutes(config.working_hours[1])

        self.cash_accounts = config.cash_account_ids
        self.other_accounts = config.account_ids[config.n_cash_accounts :]

        users = config.user_ids
        weights = np.array([1.0 / (i + 1) for i in range(len(users))])
        self.users = users
        self.user_weights = weights / weights.sum()

        self.archetypes = [a for a, w in config.anomaly_archetypes.items() if w > 0]
        weights = np.array([config.anomaly_archetypes[a] for a in self.archetypes])
        self.archetype_weights = weights / weights.sum() if len(weights) else weights

    # ------------------------------------------------------------ feasibility

    def check_feasible(self) -> None:
        """Raise InfeasibleConfig when the configuration cannot be met."""
        config = self.config
        anomalies = config.anomaly_count
        normals = config.n_postings - anomalies

        if self.work_start >= self.work_end:
            raise InfeasibleConfig("working_hours window is empty")
        if config.n_accounts <= config.n_cash_accounts:
            raise InfeasibleConfig("n_accounts must exceed n_cash_accounts")
        if (normals > 0 or anomalies > 0) and not self.weekdays:
            raise InfeasibleConfig("date_range contains no weekday")
        if anomalies == 0:
            return
        if len(self.archetypes) < 2:
            raise InfeasibleConfig("anomalies need at least two archetypes with positive weight")
        if Archetype.WEEKEND_POSTING in self.archetypes and not self.weekend_days:
            raise InfeasibleConfig("weekend_posting needs a weekend day in date_range")

    # ------------------------------------------------------------ drawing

    def _uniform_int(self, low: int, high: int) -> int:
        return int(self.rng.integers(low, high + 1))

    def _pick(self, items: list) -> object:
        return items[int(self.rng.integers(0, len(items)))]

    def _normal_total_cents(self) -> int:
        mu, sigma = self.config.amount_lognormal
        return max(int(round(float(self.rng.lognormal(mu, sigma)) * 100)), 1)

    def _working_time(self) -> time:
        return _as_time(self._uniform_int(self.work_start, self.work_end - 1))

    def _off_hours_time(self) -> time:
        before = self.work_start
        after = MINUTES_PER_DAY - self.work_end
        slot = self._uniform_int(0, before + after - 1)
        return _as_time(slot if slot < before else self.work_end + slot - before)

    def _split(self, total: int, parts: int) -> list[int]:
        """Split ``total`` cents into ``parts`` positive integers summing exactly."""
        total = max(total, parts)
        shares = self.rng.dirichlet(np.ones(parts))
        spare = total - parts
        amounts = [1 + int(math.floor(s * spare)) for s in shares]
        amounts[0] += total - sum(amounts)
        return amounts

    def _line_account(self) -> str:
        if self.rng.random() < CASH_LINE_PROBABILITY:
            return str(self._pick(self.cash_accounts))
        return str(self._pick(self.other_accounts))

    def _line_extras(self) -> tuple[Decimal, str]:
        return TAX_RATES[int(self.rng.integers(0, len(TAX_RATES)))], str(self._pick(list(MEMOS)))

    def _normal_posting(self, posting_id: str) -> _Posting:
        posting = _Posting(
            posting_id=posting_id,
            posting_date=self._pick(self.weekdays),
            posting_time=self._working_time(),
            period_days=self._uniform_int(*NORMAL_PERIOD_DAYS),
            user_id=str(self.rng.choice(self.users, p=self.user_weights)),
        )
        n_lines = self._uniform_int(2, 4)
        total = self._normal_total_cents()
        single_debit = self.rng.random() < 0.5
        split = self._split(total, n_lines - 1)
        single_side, many_side = (
            (CDFlag.DEBIT, CDFlag.CREDIT) if single_debit else (CDFlag.CREDIT, CDFlag.DEBIT)
        )
        sides = [(single_side, sum(split))] + [(many_side, amount) for amount in split]
        for side, amount in sides:
            tax, memo = self._line_extras()
            posting.lines.append(_Line(side, amount, self._line_account(), tax, memo))
        return posting

    def _anomaly_posting(self, posting_id: str) -> _Posting:
        picked = self.rng.choice(
            len(self.archetypes), size=2, replace=False, p=self.archetype_weights
        )
        archetypes = frozenset(self.archetypes[int(i)] for i in picked)

        if Archetype.WEEKEND_POSTING in archetypes:
            posting_date = self._pick(self.weekend_days)
        else:
            posting_date = self._pick(self.weekdays)
        if Archetype.OFF_HOURS_POSTING in archetypes:
            posting_time = self._off_hours_time()
        else:
            posting_time = self._working_time()
        if Archetype.LATE_PAYMENT in archetypes:
            period = self._uniform_int(*LATE_PERIOD_DAYS)
        else:
            period = self._uniform_int(*NORMAL_PERIOD_DAYS)

        posting = _Posting(
            posting_id=posting_id,
            posting_date=posting_date,
            posting_time=posting_time,
            period_days=period,
            user_id=str(self.rng.choice(self.users, p=self.user_weights)),
            archetypes=archetypes,
        )
        if Archetype.TOP_AMOUNT in archetypes:
            posting.factor = float(self.rng.uniform(*TOP_AMOUNT_FACTOR))
        elif Archetype.HIGH_CASH in archetypes:
            posting.factor = float(self.rng.uniform(*HIGH_CASH_FACTOR))

        amount = self._normal_total_cents()
        debit_account = (
            str(self._pick(self.cash_accounts))
            if Archetype.HIGH_CASH in archetypes
            else str(self._pick(self.other_accounts))
        )
        for side, account in (
            (CDFlag.DEBIT, debit_account),
            (CDFlag.CREDIT, str(self._pick(self.other_accounts))),
        ):
            tax, memo = self._line_extras()
            posting.lines.append(_Line(side, amount, account, tax, memo))
        return posting

    def _scale_large_anomalies(self, postings: list[_Posting]) -> None:
        """Lift large-amount anomalies above every normal line."""
        normal_lines = [l.amount_cents for p in postings if not p.is_anomaly for l in p.lines]
        mu = self.config.amount_lognormal[0]
        ceiling = max(normal_lines) if normal_lines else max(int(math.exp(mu) * 100), 1)
        for posting in postings:
            if posting.factor <= 0:
                continue
            amount = max(int(ceiling * posting.factor), ceiling + 1)
            for line in posting.lines:
                line.amount_cents = amount

    # ------------------------------------------------------------ assembly

    def _entries(self, postings: list[_Posting]) -> tuple[JournalEntry, ...]:
        entries: list[JournalEntry] = []
        for posting in postings:
            for k, line in enumerate(posting.lines, start=1):
                entries.append(
                    JournalEntry(
                        entry_id=f"{posting.posting_id}-{k}",
                        posting_id=posting.posting_id,
                        posting_date=posting.posting_date,
                        posting_time=posting.posting_time,
                        transaction_date=posting.posting_date - timedelta(days=posting.period_days),
                        cd_flag=line.cd_flag,
                        amount_cents=line.amount_cents,
                        currency=self.config.currency,
                        tax_rate=line.tax_rate,
                        account_id=line.account_id,
                        user_id=posting.user_id,
                        memo=line.memo,
                    )
                )
        return tuple(entries)

    def _dataset(self, postings: list[_Posting]) -> Dataset:
        labels = {p.posting_id: int(p.is_anomaly) for p in postings}
        return Dataset(
            entries=self._entries(postings),
            labels=labels,
            label_provenance=LabelProvenance.GROUND_TRUTH,
        )

    def _repair(self, postings: list[_Posting], posting_ids: set[str]) -> None:
        """Move cash lines of the given normal postings to non-cash accounts."""
        cash = set(self.cash_accounts)
        for posting in postings:
            if posting.posting_id not in posting_ids:
                continue
            for line in posting.lines:
                if line.account_id in cash:
                    line.account_id = str(self._pick(self.other_accounts))

    def _disagreements(self, dataset: Dataset) -> tuple[set[str], set[str]]:
        flags = flag_table(dataset, self.config.jet_config())
        labels = dataset.labels or {}
        false_pos = {f.posting_id for f in flags if f.verdict == 1 and labels[f.posting_id] == 0}
        false_neg = {f.posting_id for f in flags if f.verdict == 0 and labels[f.posting_id] == 1}
        return false_pos, false_neg

    def generate(self) -> LabeledDataset:
        self.check_feasible()
        config = self.config

        width = max(6, len(str(config.n_postings)))
        anomalous = set(
            int(i)
            for i in self.rng.choice(config.n_postings, size=config.anomaly_count, replace=False)
        )
        postings = [
            self._anomaly_posting(f"JE{i + 1:0{width}d}")
            if i in anomalous
            else self._normal_posting(f"JE{i + 1:0{width}d}")
            for i in range(config.n_postings)
        ]

        top_amount = sum(1 for p in postings if Archetype.TOP_AMOUNT in p.archetypes)
        if top_amount > config.top_n_count:
            raise InfeasibleConfig(
                f"{top_amount} top_amount anomalies exceed top_n_count {config.top_n_count}"
            )
        self._scale_large_anomalies(postings)

        dataset = self._dataset(postings)
        false_pos, false_neg = self._disagreements(dataset)
        if false_pos:
            logger.debug("synthgen_repairing_postings", count=len(false_pos))
            self._repair(postings, false_pos)
            dataset = self._dataset(postings)
            false_pos, false_neg = self._disagreements(dataset)
        if false_neg:
            raise InfeasibleConfig(
                f"{len(false_neg)} injected anomalies trigger fewer than two flags"
            )
        if false_pos:
            raise InfeasibleConfig(f"{len(false_pos)} normal postings trigger two or more flags")

        result = LabeledDataset(
            dataset=dataset,
            injected_archetypes={p.posting_id: p.archetypes for p in postings if p.is_anomaly},
        )
        logger.info(
            "synthetic_ledger_generated",
            seed=config.seed,
            postings=config.n_postings,
            entries=len(dataset.entries),
            anomalies=len(result.injected_archetypes),
        )
        return result


def generate(config: GenConfig) -> LabeledDataset:
    """Generate a labeled synthetic ledger.

    Args:
        config: Generator configuration.

    Returns:
        LabeledDataset with ground-truth labels and injected archetypes.

    Raises:
        InfeasibleConfig: When the configuration cannot be satisfied.
    """
    return SyntheticLedgerGenerator(config).generate()


def describe(labeled: LabeledDataset) -> DatasetSummary:
    """Counts and archetype histogram of a labeled dataset."""
    dataset = labeled.dataset
    histogram = Counter(
        archetype.value
        for archetypes in labeled.injected_archetypes.values()
        for archetype in archetypes
    )
    return DatasetSummary(
        postings=len(dataset.groups),
        entries=len(dataset.entries),
        anomalies=sum((dataset.labels or {}).values()),
        users=len({e.user_id for e in dataset.entries}),
        accounts=len({e.account_id for e in dataset.entries}),
        archetype_histogram=dict(sorted(histogram.items())),
    )
