"""Ledger domain types: journal entries, posting groups and datasets."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, time
from decimal import Decimal
from enum import Enum
from typing import Iterable, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.ledger_audit.exceptions import LabelError


class CDFlag(str, Enum):
    """Debit/credit side of a ledger line."""

    DEBIT = "D"
    CREDIT = "C"


class DataFormat(str, Enum):
    """Supported ledger file formats."""

    CSV = "csv"
    JSONL = "jsonl"


class LabelProvenance(str, Enum):
    """Where a dataset's labels came from."""

    GROUND_TRUTH = "ground_truth"
    JET_PSEUDO_LABEL = "jet_pseudo_label"
    NONE = "none"


def cents_to_decimal(cents: int) -> Decimal:
    """Convert scaled-integer cents to a two-decimal Decimal."""
    return Decimal(cents).scaleb(-2)


class JournalEntry(BaseModel):
    """One ledger line.

    Amounts are stored as non-negative integer cents; the sign lives in
    ``cd_flag``. ``posting_time`` is optional because anonymized ledgers
    often drop it.
    """

    entry_id: str = Field(min_length=1, description="Unique line identifier")
    posting_id: str = Field(min_length=1, description="Journal entry grouping key")
    posting_date: date = Field(description="Date the line was booked")
    posting_time: Optional[time] = Field(default=None, description="Booking time, minutes resolution")
    transaction_date: date = Field(description="Date of the underlying business event")
    cd_flag: CDFlag = Field(description="Debit or credit")
    amount_cents: int = Field(ge=0, description="Magnitude in cents")
    currency: str = Field(pattern=r"^[A-Z]{3}$", description="ISO-4217 code")
    tax_rate: Optional[Decimal] = Field(default=None, ge=0, le=100, description="Tax rate in percent")
    account_id: str = Field(min_length=1, description="Ledger account")
    user_id: str = Field(min_length=1, description="User who booked the line")
    memo: str = Field(default="", description="Free text")

    model_config = ConfigDict(frozen=True)

    @field_validator("posting_time")
    @classmethod
    def _truncate_to_minutes(cls, value: Optional[time]) -> Optional[time]:
        if value is None:
            return None
        return value.replace(second=0, microsecond=0, tzinfo=None)

    @property
    def amount(self) -> Decimal:
        """Amount as a two-decimal Decimal."""
        return cents_to_decimal(self.amount_cents)

    @property
    def payment_period_days(self) -> int:
        """Days between transaction date and posting date (may be negative)."""
        return (self.posting_date - self.transaction_date).days

    @property
    def is_debit(self) -> bool:
        return self.cd_flag is CDFlag.DEBIT


@dataclass(frozen=True)
class PostingGroup:
    """All lines of one journal entry.

    Totals are always recomputed from the lines.
    """

    posting_id: str
    entries: tuple[JournalEntry, ...]

    def __post_init__(self) -> None:
        foreign = [e.entry_id for e in self.entries if e.posting_id != self.posting_id]
        if foreign:
            raise ValueError(
                f"entries {foreign} do not belong to posting '{self.posting_id}'"
            )

    @property
    def debit_total_cents(self) -> int:
        return sum(e.amount_cents for e in self.entries if e.is_debit)

    @property
    def credit_total_cents(self) -> int:
        return sum(e.amount_cents for e in self.entries if not e.is_debit)

    @property
    def debit_total(self) -> Decimal:
        return cents_to_decimal(self.debit_total_cents)

    @property
    def credit_total(self) -> Decimal:
        return cents_to_decimal(self.credit_total_cents)

    @property
    def is_balanced(self) -> bool:
        return self.debit_total_cents == self.credit_total_cents

    @property
    def max_amount_cents(self) -> int:
        return max((e.amount_cents for e in self.entries), default=0)

    @property
    def payment_period_max(self) -> int:
        return max((e.payment_period_days for e in self.entries), default=0)


def group_by_posting(entries: Iterable[JournalEntry]) -> dict[str, PostingGroup]:
    """Partition entries into posting groups.

    Groups keep first-appearance order, and lines keep input order
    inside each group.

    Args:
        entries: Ledger lines in file order.

    Returns:
        Mapping posting_id -> PostingGroup.
    """
    buckets: dict[str, list[JournalEntry]] = {}
    for entry in entries:
        buckets.setdefault(entry.posting_id, []).append(entry)
    return {
        posting_id: PostingGroup(posting_id=posting_id, entries=tuple(lines))
        for posting_id, lines in buckets.items()
    }


@dataclass(frozen=True)
class Dataset:
    """A ledger plus optional per-posting labels."""

    entries: tuple[JournalEntry, ...]
    labels: Optional[Mapping[str, int]] = None
    label_provenance: LabelProvenance = LabelProvenance.NONE
    groups: dict[str, PostingGroup] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "groups", group_by_posting(self.entries))

        if self.labels is None:
            if self.label_provenance is not LabelProvenance.NONE:
                raise LabelError("label provenance set without labels")
            return

        labels = dict(self.labels)
        unknown = sorted(pid for pid in labels if pid not in self.groups)
        if unknown:
            raise LabelError(f"labels reference unknown postings: {', '.join(unknown[:5])}")
        bad = sorted(pid for pid, value in labels.items() if value not in (0, 1))
        if bad:
            raise LabelError(f"labels must be 0 or 1: {', '.join(bad[:5])}")
        object.__setattr__(self, "labels", labels)

    @property
    def posting_ids(self) -> list[str]:
        return list(self.groups)

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def with_labels(
        self, labels: Mapping[str, int], provenance: LabelProvenance
    ) -> "Dataset":
        """Return a copy carrying ``labels``."""
        return Dataset(entries=self.entries, labels=labels, label_provenance=provenance)

    def without_labels(self) -> "Dataset":
        return Dataset(entries=self.entries)
