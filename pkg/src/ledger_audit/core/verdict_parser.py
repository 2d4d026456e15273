"""Parsing of raw model responses into verdicts.

A response is Clean when it is exactly one JSON object whose ``anomaly`` is
the integer 0 or 1. The repair pass accepts an object embedded in prose and
normalizes near-miss values (``true``, ``"1"``, ``1.0``); anything it
touches is marked Repaired. With repair disabled every deviation fails.
"""

from __future__ import annotations

import json
from typing import Any, Iterator, Optional

import structlog

from src.ledger_audit.exceptions import ParseFailure
from src.ledger_audit.models.prompt import Dialect
from src.ledger_audit.models.verdict import ParsedVerdict, ParseStatus

logger = structlog.get_logger(__name__)

END_OF_ANALYSIS = "<|endofanalysis|>"

# Raw text kept in ParseFailure for diagnostics
RAW_EXCERPT_CHARS = 200


def iter_balanced_objects(text: str) -> Iterator[str]:
    """Yield top-level ``{...}`` spans, ignoring braces inside JSON strings."""
    depth = 0
    start = 0
    in_string = False
    escaped = False
    for i, char in enumerate(text):
        if depth > 0 and in_string:
            if escaped:
                escaped = False
            elif char == "\\":
                escaped = True
            elif char == '"':
                in_string = False
            continue
        if char == '"' and depth > 0:
            in_string = True
        elif char == "{":
            if depth == 0:
                start = i
            depth += 1
        elif char == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                yield text[start : i + 1]


def _normalize_anomaly(value: Any) -> tuple[int, bool]:
    """Return (anomaly, repaired) or raise ParseFailure."""
    if isinstance(value, bool):
        return int(value), True
    if isinstance(value, int) and value in (0, 1):
        return value, False
    if isinstance(value, float) and value in (0.0, 1.0):
        return int(value), True
    if isinstance(value, str) and value.strip() in ("0", "1"):
        return int(value.strip()), True
    raise ParseFailure(f"anomaly value {value!r} is not 0 or 1")


def _normalize_confidence(value: Any) -> tuple[Optional[float], bool]:
    if value is None:
        return None, False
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        number = float(value)
        if 0.0 <= number <= 1.0:
            return number, False
    return None, True


def _fields(obj: dict[str, Any], dialect: Dialect) -> tuple[ParsedVerdict, bool]:
    if "anomaly" not in obj:
        raise ParseFailure("object has no 'anomaly' key")
    anomaly, repaired = _normalize_anomaly(obj["anomaly"])

    confidence: Optional[float] = None
    if dialect is Dialect.SYNTHETIC and "confidence" in obj:
        confidence, dropped = _normalize_confidence(obj["confidence"])
        repaired = repaired or dropped

    explanation = obj.get("explanation")
    if not isinstance(explanation, str):
        repaired = True
        explanation = "" if explanation is None else json.dumps(explanation, ensure_ascii=False)

    verdict = ParsedVerdict(anomaly=anomaly, confidence=confidence, explanation=explanation)
    return verdict, repaired


def _load_object(text: str) -> Optional[dict[str, Any]]:
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, RecursionError):
        return None
    return obj if isinstance(obj, dict) else None


def parse_verdict(raw: str, dialect: Dialect, repair: bool = True) -> ParsedVerdict:
    """Parse one raw response.

    Args:
        raw: Model output text.
        dialect: Vanilla, or Synthetic (end-of-analysis terminator and
            optional confidence).
        repair: Allow extraction from prose and value normalization.

    Returns:
        ParsedVerdict with parse_status Clean or Repaired.

    Raises:
        ParseFailure: When no usable verdict object is found.
    """
    text = raw.strip()
    if dialect is Dialect.SYNTHETIC and text.endswith(END_OF_ANALYSIS):
        text = text[: -len(END_OF_ANALYSIS)].rstrip()

    try:
        obj = _load_object(text)
        extracted = False
        if obj is None:
            if not repair:
                raise ParseFailure("response is not a bare JSON object")
            for candidate in iter_balanced_objects(text):
                loaded = _load_object(candidate)
                if loaded is not None and "anomaly" in loaded:
                    obj = loaded
                    extracted = True
                    break
            if obj is None:
                raise ParseFailure("no balanced JSON object with an 'anomaly' key")

        verdict, normalized = _fields(obj, dialect)
        if normalized and not repair:
            raise ParseFailure("verdict fields deviate from the strict schema")
    except ParseFailure as e:
        raise ParseFailure(e.reason, raw[:RAW_EXCERPT_CHARS]) from None

    if extracted or normalized:
        return verdict.model_copy(update={"parse_status": ParseStatus.REPAIRED})
    return verdict
