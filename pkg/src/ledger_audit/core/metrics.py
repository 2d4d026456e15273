"""Confusion counts, metric conventions and report comparison.

Two averaging conventions are supported. PositiveClass scores the anomaly
class alone. Macro averages the per-class precision, recall and F1 of the
anomaly and the normal class. A ratio with a zero denominator is reported
as 0 and the MetricSet is marked ``undefined``.
"""

from __future__ import annotations

import hashlib
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import structlog

from src.ledger_audit.core.ledger_io import read_rows
from src.ledger_audit.exceptions import EvaluationError, LabelSetMismatch, MissingLabel
from src.ledger_audit.models.evaluation import (
    Averaging,
    ComparisonRow,
    ComparisonTable,
    ConfusionCounts,
    EvalReport,
    MetricSet,
)
from src.ledger_audit.models.verdict import ModelVerdict

logger = structlog.get_logger(__name__)

TABLE_COLUMNS: tuple[str, ...] = (
    "Method",
    "Variant",
    "Precision",
    "Recall",
    "F1",
    "TP",
    "FP",
    "FN",
    "TN",
    "dP",
    "dR",
    "dF1",
)


def round_half_up(value: float, places: int = 2) -> float:
    """Display rounding: half-up on the decimal representation."""
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def _ratio(numerator: int, denominator: int) -> tuple[float, bool]:
    if denominator == 0:
        return 0.0, True
    return numerator / denominator, False


def _f1(precision: float, recall: float) -> tuple[float, bool]:
    if precision + recall == 0:
        return 0.0, True
    return 2 * precision * recall / (precision + recall), False


def _class_scores(tp: int, fp: int, fn: int) -> tuple[float, float, float, bool]:
    precision, p_undef = _ratio(tp, tp + fp)
    recall, r_undef = _ratio(tp, tp + fn)
    f1, f_undef = _f1(precision, recall)
    return precision, recall, f1, p_undef or r_undef or f_undef


def confusion(
    predictions: Mapping[str, int],
    labels: Mapping[str, int],
    strict: bool = True,
) -> ConfusionCounts:
    """Count predictions against labels, anomaly (1) as the positive class.

    Args:
        predictions: posting_id -> predicted 0/1.
        labels: posting_id -> true 0/1.
        strict: Raise on a prediction without label instead of skipping it.

    Raises:
        MissingLabel: In strict mode, for the first unlabeled prediction.
    """
    tp = fp = fn = tn = 0
    skipped = 0
    for posting_id, predicted in predictions.items():
        if posting_id not in labels:
            if strict:
                raise MissingLabel(posting_id)
            skipped += 1
            continue
        actual = labels[posting_id]
        if predicted == 1 and actual == 1:
            tp += 1
        elif predicted == 1:
            fp += 1
        elif actual == 1:
            fn += 1
        else:
            tn += 1
    if skipped:
        logger.warning("unlabeled_predictions_skipped", count=skipped)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def metrics(counts: ConfusionCounts, averaging: Averaging) -> MetricSet:
    """Precision, recall and F1 under ``averaging``."""
    pos = _class_scores(counts.tp, counts.fp, counts.fn)
    if averaging is Averaging.POSITIVE_CLASS:
        precision, recall, f1, undefined = pos
    else:
        # Normal class: true negatives play the role of true positives
        neg = _class_scores(counts.tn, counts.fn, counts.fp)
        precision = (pos[0] + neg[0]) / 2
        recall = (pos[1] + neg[1]) / 2
        f1 = (pos[2] + neg[2]) / 2
        undefined = pos[3] or neg[3]
    return MetricSet(
        precision=precision,
        recall=recall,
        f1=f1,
        averaging=averaging,
        undefined=undefined,
    )


def label_set_digest(labels: Mapping[str, int]) -> str:
    """sha256 over the sorted ``posting_id=label`` pairs."""
    digest = hashlib.sha256()
    for posting_id in sorted(labels):
        digest.update(f"{posting_id}={labels[posting_id]}\n".encode("utf-8"))
    return digest.hexdigest()


def aggregate_verdicts(verdicts: Iterable[ModelVerdict]) -> tuple[dict[str, int], list[str]]:
    """Fold instance verdicts into posting predictions.

    A posting is anomalous when any of its verdicts says so. A posting whose
    verdicts all failed, or that has a failed verdict and no anomalous one,
    is excluded.

    Returns:
        (predictions, excluded posting ids) in first-appearance order.
    """
    flagged: dict[str, bool] = {}
    failed: set[str] = set()
    for verdict in verdicts:
        flagged.setdefault(verdict.posting_id, False)
        if verdict.failed:
            failed.add(verdict.posting_id)
        elif verdict.anomaly == 1:
            flagged[verdict.posting_id] = True
    predictions: dict[str, int] = {}
    excluded: list[str] = []
    for posting_id, is_flagged in flagged.items():
        if is_flagged:
            predictions[posting_id] = 1
        elif posting_id in failed:
            excluded.append(posting_id)
        else:
            predictions[posting_id] = 0
    return predictions, excluded


def evaluate_predictions(
    method_name: str,
    variant: str,
    predictions: Mapping[str, int],
    labels: Mapping[str, int],
    excluded_ids: Sequence[str] = (),
    label_provenance: str = "none",
    run_metadata: Optional[dict[str, Any]] = None,
    strict: bool = True,
) -> EvalReport:
    """Build an EvalReport carrying both metric conventions."""
    counts = confusion(predictions, labels, strict=strict)
    report = EvalReport(
        method_name=method_name,
        variant=variant,
        counts=counts,
        metrics_macro=metrics(counts, Averaging.MACRO),
        metrics_positive=metrics(counts, Averaging.POSITIVE_CLASS),
        excluded=len(excluded_ids),
        excluded_ids=list(excluded_ids),
        label_set_digest=label_set_digest(labels),
        label_provenance=label_provenance,
        run_metadata=run_metadata or {},
    )
    if report.excluded:
        logger.warning(
            "verdicts_excluded_from_metrics",
            method=method_name,
            variant=variant,
            excluded=report.excluded,
        )
    logger.info(
        "evaluation_complete",
        method=method_name,
        variant=variant,
        tp=counts.tp,
        fp=counts.fp,
        fn=counts.fn,
        tn=counts.tn,
    )
    return report


def load_predictions(path: str | Path) -> tuple[str, dict[str, int], list[str]]:
    """Read predictions from a verdict, JET flag or isolation forest CSV.

    Returns:
        (kind, predictions, excluded ids) where kind is ``verdicts``, ``jet``
        or ``iforest``.

    Raises:
        EvaluationError: If the file matches none of the known layouts.
    """
    rows = read_rows(path)
    columns = set(rows[0]) if rows else set()
    if {"anomaly", "parse_status"} <= columns:
        verdicts = [
            ModelVerdict(
                posting_id=row["posting_id"],
                instance_id=row["instance_id"],
                anomaly=int(row["anomaly"]) if row["anomaly"] else None,
                parse_status=row["parse_status"],
            )
            for row in rows
        ]
        predictions, excluded = aggregate_verdicts(verdicts)
        return "verdicts", predictions, excluded
    if {"verdict", "triggered"} <= columns:
        return "jet", {row["posting_id"]: int(row["verdict"]) for row in rows}, []
    if {"score", "decision"} <= columns:
        return (
            "iforest",
            {row["posting_id"]: int(row["decision"] == "Anomaly") for row in rows},
            [],
        )
    raise EvaluationError(f"{path}: not a verdict, jet or iforest file")


# ---------------------------------------------------------------- comparison


def report_label(report: EvalReport) -> str:
    return f"{report.method_name} / {report.variant}"


def compare(
    reports: Sequence[EvalReport],
    averaging: Averaging = Averaging.POSITIVE_CLASS,
    baseline: Optional[str] = None,
) -> ComparisonTable:
    """Side-by-side table sorted by F1, with deltas against a baseline.

    Args:
        reports: Reports over one label set.
        averaging: Convention whose metrics are shown and sorted on.
        baseline: ``report_label`` of the baseline; defaults to the first report.

    Raises:
        LabelSetMismatch: If the reports were computed over different labels.
        EvaluationError: If no reports are given or the baseline is unknown.
    """
    if not reports:
        raise EvaluationError("nothing to compare")
    digests = {r.label_set_digest for r in reports}
    if len(digests) > 1:
        raise LabelSetMismatch(
            f"reports span {len(digests)} different label sets; compare runs over one dataset"
        )

    labels = [report_label(r) for r in reports]
    if baseline is None:
        base = reports[0]
    elif baseline in labels:
        base = reports[labels.index(baseline)]
    else:
        raise EvaluationError(f"baseline '{baseline}' is not among the reports")
    base_metrics = base.metrics(averaging)

    rows = []
    for report in reports:
        m = report.metrics(averaging)
        c = report.counts
        rows.append(
            ComparisonRow(
                method_name=report.method_name,
                variant=report.variant,
                precision=m.precision,
                recall=m.recall,
                f1=m.f1,
                tp=c.tp,
                fp=c.fp,
                fn=c.fn,
                tn=c.tn,
                excluded=report.excluded,
                delta_precision=m.precision - base_metrics.precision,
                delta_recall=m.recall - base_metrics.recall,
                delta_f1=m.f1 - base_metrics.f1,
                delta_tp=c.tp - base.counts.tp,
                delta_fp=c.fp - base.counts.fp,
                delta_fn=c.fn - base.counts.fn,
                delta_tn=c.tn - base.counts.tn,
            )
        )
    rows.sort(key=lambda r: -r.f1)

    excluded = [f"{r.method_name} / {r.variant}: {r.excluded}" for r in rows if r.excluded]
    notes = "excluded failed verdicts: " + "; ".join(excluded) if excluded else None
    return ComparisonTable(
        averaging=averaging,
        baseline=report_label(base),
        label_set_digest=digests.pop(),
        rows=rows,
        notes=notes,
    )


def _signed(value: float) -> str:
    rounded = round_half_up(value)
    return f"{rounded:+.2f}" if rounded != 0 else "0.00"


def render_table(table: ComparisonTable) -> str:
    """Aligned text rendering, two-decimal half-up metrics."""
    body = [
        (
            row.method_name,
            row.variant,
            f"{round_half_up(row.precision):.2f}",
            f"{round_half_up(row.recall):.2f}",
            f"{round_half_up(row.f1):.2f}",
            str(row.tp),
            str(row.fp),
            str(row.fn),
            str(row.tn),
            _signed(row.delta_precision),
            _signed(row.delta_recall),
            _signed(row.delta_f1),
        )
        for row in table.rows
    ]
    widths = [
        max(len(TABLE_COLUMNS[i]), *(len(r[i]) for r in body)) if body else len(TABLE_COLUMNS[i])
        for i in range(len(TABLE_COLUMNS))
    ]

    def line(cells: Sequence[str]) -> str:
        # Text columns left-aligned, numbers right-aligned
        return "  ".join(
            c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))
        ).rstrip()

    out = [
        f"averaging: {table.averaging.value}  baseline: {table.baseline}",
        line(TABLE_COLUMNS),
        line(["-" * w for w in widths]),
    ]
    out.extend(line(r) for r in body)
    if table.notes:
        out.append(table.notes)
    return "\n".join(out) + "\n"
