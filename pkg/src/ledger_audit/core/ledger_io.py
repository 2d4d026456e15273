"""Ledger ingestion and artifact emission.

CSV files follow RFC-4180 quoting with the header
``entry_id,posting_id,posting_date,posting_time,transaction_date,cd_flag,
amount,currency,tax_rate,account_id,user_id,memo``; JSONL files carry one
object per entry with the same field names.
"""

from __future__ import annotations

import csv
import json
from datetime import date, time
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import structlog
from pydantic import ValidationError
from pydantic_core import to_jsonable_python

from src.ledger_audit.exceptions import (
    DuplicateEntryId,
    IoFailure,
    LabelError,
    MalformedRow,
    MissingColumn,
    UnknownColumn,
)
from src.ledger_audit.models.ledger import DataFormat, Dataset, JournalEntry, LabelProvenance
from src.ledger_audit.models.synth import Archetype

logger = structlog.get_logger(__name__)

SCHEMA_COLUMNS: tuple[str, ...] = (
    "entry_id",
    "posting_id",
    "posting_date",
    "posting_time",
    "transaction_date",
    "cd_flag",
    "amount",
    "currency",
    "tax_rate",
    "account_id",
    "user_id",
    "memo",
)

# Anonymized ledgers may omit these columns entirely
OPTIONAL_COLUMNS = frozenset({"posting_time", "tax_rate", "memo"})
REQUIRED_COLUMNS: tuple[str, ...] = tuple(c for c in SCHEMA_COLUMNS if c not in OPTIONAL_COLUMNS)

LABEL_COLUMNS: tuple[str, ...] = ("posting_id", "label", "archetypes")

CENT = Decimal("0.01")


# ---------------------------------------------------------------- field parsing


def _parse_decimal(value: Any, field: str, line: int) -> Decimal:
    if isinstance(value, bool):
        raise MalformedRow(line, f"{field} must be a number, got boolean")
    try:
        number = value if isinstance(value, Decimal) else Decimal(str(value).strip())
    except InvalidOperation as e:
        raise MalformedRow(line, f"{field} '{value}' is not a decimal number") from e
    if not number.is_finite():
        raise MalformedRow(line, f"{field} must be finite")
    return number


def parse_amount_cents(value: Any, line: int) -> int:
    """Parse a non-negative amount with at most two decimals into cents."""
    amount = _parse_decimal(value, "amount", line)
    if amount < 0:
        raise MalformedRow(line, f"amount {amount} is negative; the sign belongs in cd_flag")
    scaled = amount.scaleb(2)
    if scaled != scaled.to_integral_value():
        raise MalformedRow(line, f"amount {amount} has more than two decimals")
    return int(scaled)


def _parse_tax_rate(value: Any, line: int) -> Optional[Decimal]:
    if value is None or (isinstance(value, str) and not value.strip()):
        return None
    rate = _parse_decimal(value, "tax_rate", line)
    if not Decimal(0) <= rate <= Decimal(100):
        raise MalformedRow(line, f"tax_rate {rate} outside [0, 100]")
    return rate


def _parse_date(value: Any, field: str, line: int) -> date:
    try:
        return date.fromisoformat(str(value).strip())
    except ValueError as e:
        raise MalformedRow(line, f"{field} '{value}' is not YYYY-MM-DD") from e


def _parse_time(value: Any, line: int) -> Optional[time]:
    if value is None or not str(value).strip():
        return None
    try:
        return time.fromisoformat(str(value).strip())
    except ValueError as e:
        raise MalformedRow(line, f"posting_time '{value}' is not HH:MM") from e


def parse_entry(record: Mapping[str, Any], line: int) -> JournalEntry:
    """Build a JournalEntry from one raw record.

    Args:
        record: Field name to raw value (strings from CSV, JSON values from JSONL).
        line: 1-based source line used in error messages.

    Returns:
        Validated JournalEntry.

    Raises:
        MalformedRow: If any field violates the schema.
    """
    cd_flag = str(record.get("cd_flag") or "").strip()
    if cd_flag not in ("D", "C"):
        raise MalformedRow(line, f"cd_flag '{cd_flag}' must be D or C")

    try:
        return JournalEntry(
            entry_id=str(record.get("entry_id") or "").strip(),
            posting_id=str(record.get("posting_id") or "").strip(),
            posting_date=_parse_date(record.get("posting_date"), "posting_date", line),
            posting_time=_parse_time(record.get("posting_time"), line),
            transaction_date=_parse_date(record.get("transaction_date"), "transaction_date", line),
            cd_flag=cd_flag,
            amount_cents=parse_amount_cents(record.get("amount"), line),
            currency=str(record.get("currency") or "").strip(),
            tax_rate=_parse_tax_rate(record.get("tax_rate"), line),
            account_id=str(record.get("account_id") or "").strip(),
            user_id=str(record.get("user_id") or "").strip(),
            memo=str(record.get("memo") or ""),
        )
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"]) or "row"
        raise MalformedRow(line, f"{field}: {first['msg']}") from e


# ---------------------------------------------------------------- ingestion


def _check_columns(columns: Sequence[str], strict: bool) -> None:
    present = set(columns)
    for column in REQUIRED_COLUMNS:
        if column not in present:
            raise MissingColumn(column)
    unknown = [c for c in columns if c not in SCHEMA_COLUMNS]
    if unknown:
        if strict:
            raise UnknownColumn(unknown[0])
        logger.warning("unknown_columns_ignored", columns=unknown)


def _read_csv_records(path: Path, strict: bool) -> list[tuple[int, dict[str, Any]]]:
    records: list[tuple[int, dict[str, Any]]] = []
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise MissingColumn(REQUIRED_COLUMNS[0])
        _check_columns([c.strip() for c in reader.fieldnames], strict)
        for row in reader:
            if None in row:
                raise MalformedRow(reader.line_num, "more fields than header columns")
            records.append((reader.line_num, {k.strip(): v for k, v in row.items()}))
    return records


def _read_jsonl_records(path: Path, strict: bool) -> list[tuple[int, dict[str, Any]]]:
    records: list[tuple[int, dict[str, Any]]] = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line, parse_float=Decimal)
            except json.JSONDecodeError as e:
                raise MalformedRow(line_number, f"invalid JSON: {e.msg}") from e
            if not isinstance(record, dict):
                raise MalformedRow(line_number, "expected a JSON object")
            _check_columns(list(record), strict)
            records.append((line_number, record))
    return records


def load_dataset(
    path: str | Path,
    fmt: DataFormat = DataFormat.CSV,
    strict: bool = True,
) -> Dataset:
    """Load a ledger file into an unlabeled Dataset.

    Args:
        path: Ledger file.
        fmt: CSV or JSONL.
        strict: Reject columns outside the schema instead of ignoring them.

    Returns:
        Dataset with entries in file order and groups derived.

    Raises:
        MalformedRow, DuplicateEntryId, UnknownColumn, MissingColumn, IoFailure.
    """
    path = Path(path)
    try:
        if fmt is DataFormat.JSONL:
            records = _read_jsonl_records(path, strict)
        else:
            records = _read_csv_records(path, strict)
    except OSError as e:
        raise IoFailure(path, e.strerror or str(e)) from e
    except UnicodeDecodeError as e:
        raise IoFailure(path, f"not UTF-8: {e.reason}") from e

    entries: list[JournalEntry] = []
    seen: set[str] = set()
    for line, record in records:
        entry = parse_entry(record, line)
        if entry.entry_id in seen:
            raise DuplicateEntryId(entry.entry_id, line)
        seen.add(entry.entry_id)
        entries.append(entry)

    dataset = Dataset(entries=tuple(entries))
    logger.info(
        "dataset_loaded",
        path=str(path),
        format=fmt.value,
        entries=len(dataset.entries),
        postings=len(dataset.groups),
    )
    return dataset


# ---------------------------------------------------------------- emission


def entry_record(entry: JournalEntry) -> dict[str, Optional[str]]:
    """Schema-ordered string record of one entry, as written to files."""
    return {
        "entry_id": entry.entry_id,
        "posting_id": entry.posting_id,
        "posting_date": entry.posting_date.isoformat(),
        "posting_time": entry.posting_time.strftime("%H:%M") if entry.posting_time else None,
        "transaction_date": entry.transaction_date.isoformat(),
        "cd_flag": entry.cd_flag.value,
        "amount": f"{entry.amount:.2f}",
        "currency": entry.currency,
        "tax_rate": str(entry.tax_rate) if entry.tax_rate is not None else None,
        "account_id": entry.account_id,
        "user_id": entry.user_id,
        "memo": entry.memo,
    }


def _open_for_write(path: Path):
    if not path.parent.exists():
        raise IoFailure(path, "parent directory does not exist")
    try:
        return path.open("w", encoding="utf-8", newline="")
    except OSError as e:
        raise IoFailure(path, e.strerror or str(e)) from e


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV artifact with ``\\n`` line endings."""
    path = Path(path)
    try:
        with _open_for_write(path) as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise IoFailure(path, e.strerror or str(e)) from e


def read_rows(path: str | Path) -> list[dict[str, str]]:
    """Read a CSV artifact written by ``write_rows``."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as handle:
            return list(csv.DictReader(handle))
    except OSError as e:
        raise IoFailure(path, e.strerror or str(e)) from e


def write_jsonl(path: str | Path, records: Iterable[Any]) -> None:
    """Write one compact, key-sorted JSON object per line."""
    path = Path(path)
    try:
        with _open_for_write(path) as handle:
            for record in records:
                handle.write(
                    json.dumps(to_jsonable_python(record), sort_keys=True, ensure_ascii=False)
                )
                handle.write("\n")
    except OSError as e:
        raise IoFailure(path, e.strerror or str(e)) from e


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            return [json.loads(line) for line in handle if line.strip()]
    except OSError as e:
        raise IoFailure(path, e.strerror or str(e)) from e


def write_dataset(dataset: Dataset, path: str | Path, fmt: DataFormat = DataFormat.CSV) -> None:
    """Write a dataset's entries in schema order.

    Labels are not part of the ledger file; see ``write_labels``.
    """
    path = Path(path)
    records = [entry_record(e) for e in dataset.entries]
    if fmt is DataFormat.JSONL:
        try:
            with _open_for_write(path) as handle:
                for record in records:
                    handle.write(json.dumps(record, ensure_ascii=False))
                    handle.write("\n")
        except OSError as e:
            raise IoFailure(path, e.strerror or str(e)) from e
    else:
        write_rows(
            path,
            SCHEMA_COLUMNS,
            ([r[c] if r[c] is not None else "" for c in SCHEMA_COLUMNS] for r in records),
        )
    logger.info("dataset_written", path=str(path), format=fmt.value, entries=len(records))


def write_report(report: Any, path: str | Path) -> None:
    """Write any serializable report as stable, key-sorted JSON.

    Pydantic models, dataclasses, enums, decimals and dates are converted
    through pydantic's JSON encoder. ``None`` is written as an empty object.

    Raises:
        IoFailure: If the file cannot be written.
    """
    path = Path(path)
    payload = {} if report is None else to_jsonable_python(report)
    text = json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    try:
        with _open_for_write(path) as handle:
            handle.write(text)
    except OSError as e:
        raise IoFailure(path, e.strerror or str(e)) from e
    logger.debug("report_written", path=str(path), bytes=len(text))


def write_text(text: str, path: str | Path) -> None:
    """Write a rendered text artifact.

    Raises:
        IoFailure: If the file cannot be written.
    """
    path = Path(path)
    try:
        with _open_for_write(path) as handle:
            handle.write(text)
    except OSError as e:
        raise IoFailure(path, e.strerror or str(e)) from e


# ---------------------------------------------------------------- labels


def write_labels(
    path: str | Path,
    labels: Mapping[str, int],
    archetypes: Optional[Mapping[str, Iterable[Archetype]]] = None,
) -> None:
    """Write the labels sidecar: ``posting_id,label,archetypes``."""
    archetypes = archetypes or {}
    rows = (
        (
            posting_id,
            label,
            ";".join(sorted(a.value for a in archetypes.get(posting_id, ()))),
        )
        for posting_id, label in labels.items()
    )
    write_rows(path, LABEL_COLUMNS, rows)


def load_labels(
    path: str | Path,
) -> tuple[dict[str, int], dict[str, frozenset[Archetype]]]:
    """Read a labels sidecar.

    Returns:
        (labels, archetypes) keyed by posting_id.

    Raises:
        LabelError: On values other than 0/1 or unknown archetypes.
        IoFailure: If the file cannot be read.
    """
    labels: dict[str, int] = {}
    archetypes: dict[str, frozenset[Archetype]] = {}
    for row in read_rows(path):
        posting_id = (row.get("posting_id") or "").strip()
        raw = (row.get("label") or "").strip()
        if raw not in ("0", "1"):
            raise LabelError(f"label for '{posting_id}' must be 0 or 1, got '{raw}'")
        labels[posting_id] = int(raw)
        names = [n for n in (row.get("archetypes") or "").split(";") if n]
        try:
            archetypes[posting_id] = frozenset(Archetype(n) for n in names)
        except ValueError as e:
            raise LabelError(f"unknown archetype for '{posting_id}': {e}") from e
    return labels, archetypes


def attach_labels(dataset: Dataset, path: str | Path) -> Dataset:
    """Return ``dataset`` carrying the ground-truth labels stored at ``path``."""
    labels, _ = load_labels(path)
    return dataset.with_labels(labels, LabelProvenance.GROUND_TRUTH)
