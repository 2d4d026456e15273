"""Prompt assembly from versioned templates.

Templates live in ``templates/<stem>.<version>.txt`` and use ``{snake_case}``
placeholders. Substitution is a single pass, so rendered values are never
re-scanned for placeholders.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import structlog

from src.ledger_audit.core.context_stats import context_block, format_amount, format_rate, percentile_of
from src.ledger_audit.core.ledger_io import entry_record
from src.ledger_audit.exceptions import MissingInput, PlaceholderUnresolved, PromptError
from src.ledger_audit.models.iforest import IForestResult
from src.ledger_audit.models.jet import JetFlags
from src.ledger_audit.models.ledger import Dataset, JournalEntry, PostingGroup, cents_to_decimal
from src.ledger_audit.models.prompt import PromptBundle, PromptKind, PromptVariant
from src.ledger_audit.models.run import Granularity
from src.ledger_audit.models.stats import DatasetStats

logger = structlog.get_logger(__name__)

Instance = Union[PostingGroup, JournalEntry]

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"

TEMPLATE_STEMS: dict[PromptKind, str] = {
    PromptKind.AUDIT_COPILOT: "audit_copilot",
    PromptKind.NO_IF: "audit_copilot_no_if",
    PromptKind.NO_STATS_NO_IF: "audit_copilot_no_stats_no_if",
    PromptKind.SYNTHETIC_FLAGS: "synthetic_flags",
}

# Inputs each variant cannot be built without
REQUIRED_INPUTS: dict[PromptKind, tuple[str, ...]] = {
    PromptKind.AUDIT_COPILOT: ("stats", "if_result"),
    PromptKind.NO_IF: ("stats",),
    PromptKind.NO_STATS_NO_IF: (),
    PromptKind.SYNTHETIC_FLAGS: ("flags",),
}

PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")

COMPACT = (",", ":")


@lru_cache(maxsize=None)
def _read_template(kind: PromptKind, version: str) -> str:
    path = TEMPLATE_DIR / f"{TEMPLATE_STEMS[kind]}.{version}.txt"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise PromptError(f"no template for {kind.value} version {version}: {path.name}") from e
    return text.replace("\r\n", "\n").rstrip("\n")


def load_template(variant: PromptVariant) -> str:
    """Template text of a variant, line endings normalized, trailing newline removed."""
    return _read_template(variant.kind, variant.template_version)


def placeholders_of(variant: PromptVariant) -> tuple[str, ...]:
    """Placeholder names of a variant's template in first-appearance order."""
    seen: dict[str, None] = {}
    for name in PLACEHOLDER.findall(load_template(variant)):
        seen.setdefault(name, None)
    return tuple(seen)


def render_instance_record(instance: Instance, flags: Optional[JetFlags] = None) -> str:
    """Compact single-object JSON record of a posting group or ledger line.

    Keys follow the ledger schema order; amounts carry two decimals. When
    ``flags`` are given their five values follow under ``features``.
    """
    if isinstance(instance, PostingGroup):
        record: dict[str, object] = {
            "posting_id": instance.posting_id,
            "debit_total": f"{instance.debit_total:.2f}",
            "credit_total": f"{instance.credit_total:.2f}",
            "entries": [entry_record(e) for e in instance.entries],
        }
    else:
        record = dict(entry_record(instance))
    if flags is not None:
        record["features"] = flags.feature_values()
    return json.dumps(record, ensure_ascii=False, separators=COMPACT)


def _instance_ids(instance: Instance) -> tuple[str, str]:
    if isinstance(instance, PostingGroup):
        return instance.posting_id, instance.posting_id
    return instance.posting_id, instance.entry_id


def _instance_user(instance: Instance) -> str:
    if isinstance(instance, PostingGroup):
        return instance.entries[0].user_id if instance.entries else ""
    return instance.user_id


def _instance_amount_cents(instance: Instance) -> int:
    if isinstance(instance, PostingGroup):
        return instance.max_amount_cents
    return instance.amount_cents


def _check_inputs(
    variant: PromptVariant,
    stats: Optional[DatasetStats],
    if_result: Optional[IForestResult],
    flags: Optional[JetFlags],
) -> None:
    supplied = {"stats": stats, "if_result": if_result, "flags": flags}
    for name in REQUIRED_INPUTS[variant.kind]:
        if supplied[name] is None:
            raise MissingInput(variant.kind.value, name)


def _values(
    instance: Instance,
    record: str,
    stats: Optional[DatasetStats],
    if_result: Optional[IForestResult],
    variant: PromptVariant,
) -> dict[str, str]:
    posting_id, _ = _instance_ids(instance)
    values: dict[str, str] = {"transaction_data": record}

    if stats is not None:
        values.update(context_block(stats))
        user_id = _instance_user(instance)
        amount = cents_to_decimal(_instance_amount_cents(instance))
        values["user_id"] = user_id
        values["user_tx_count"] = str(stats.user_tx_counts.get(user_id, 0))
        values["abs_amount"] = format_amount(amount)
        values["amount_percentile"] = str(percentile_of(amount, stats))

    if if_result is not None:
        if posting_id not in if_result.scores:
            raise MissingInput(variant.kind.value, f"if_result[{posting_id}]")
        values["if_status"] = if_result.decisions[posting_id].value
        values["if_score"] = f"{if_result.scores[posting_id]:.4f}"
        values["total_if_anomalies"] = str(if_result.anomaly_count)
        if stats is not None:
            values["if_anomaly_rate"] = format_rate(
                if_result.anomaly_count, stats.total_transactions
            )
    return values


def interpolate(template: str, values: Mapping[str, str]) -> tuple[str, dict[str, str]]:
    """Fill every placeholder of ``template`` from ``values``.

    Returns:
        (text, interpolation_record) where the record maps each placeholder
        of the template to its rendered value.

    Raises:
        PlaceholderUnresolved: If the template names a placeholder without value.
    """
    names = list(dict.fromkeys(PLACEHOLDER.findall(template)))
    missing = [n for n in names if n not in values]
    if missing:
        raise PlaceholderUnresolved(missing)
    text = PLACEHOLDER.sub(lambda m: values[m.group(1)], template)
    return text, {n: values[n] for n in names}


def build_prompt(
    instance: Instance,
    stats: Optional[DatasetStats] = None,
    if_result: Optional[IForestResult] = None,
    flags: Optional[JetFlags] = None,
    variant: PromptVariant = PromptVariant(),
) -> PromptBundle:
    """Assemble the prompt bundle of one posting group or ledger line.

    Args:
        instance: Posting group (posting granularity) or ledger line
            (transaction granularity).
        stats: Dataset statistics; required by AuditCopilot and NoIF.
        if_result: Forest result; required by AuditCopilot.
        flags: JET flags of the instance's posting; required by SyntheticFlags.
        variant: Prompt arm and template version.

    Returns:
        PromptBundle with the interpolated system text and the instance record.

    Raises:
        MissingInput: If the variant's required inputs are absent.
        PlaceholderUnresolved: If a template placeholder has no value.
    """
    _check_inputs(variant, stats, if_result, flags)
    posting_id, instance_id = _instance_ids(instance)

    use_flags = flags if variant.kind is PromptKind.SYNTHETIC_FLAGS else None
    if use_flags is not None and use_flags.posting_id != posting_id:
        raise PromptError(
            f"flags of posting '{use_flags.posting_id}' given for posting '{posting_id}'"
        )

    # NoIF and NoStatsNoIF never see the inputs their template omits
    use_stats = stats if variant.kind in (PromptKind.AUDIT_COPILOT, PromptKind.NO_IF) else None
    use_if = if_result if variant.kind is PromptKind.AUDIT_COPILOT else None

    record = render_instance_record(instance, use_flags)
    values = _values(instance, record, use_stats, use_if, variant)
    system_text, interpolation = interpolate(load_template(variant), values)

    return PromptBundle(
        system_text=system_text,
        instance_text=record,
        posting_id=posting_id,
        instance_id=instance_id,
        variant=variant,
        interpolation_record=interpolation,
    )


def build_prompts(
    dataset: Dataset,
    variant: PromptVariant,
    stats: Optional[DatasetStats] = None,
    if_result: Optional[IForestResult] = None,
    flags: Optional[Sequence[JetFlags]] = None,
    granularity: Granularity = Granularity.POSTING,
) -> list[PromptBundle]:
    """Bundles for every posting group, or every line, in dataset order."""
    by_posting = {f.posting_id: f for f in flags or ()}
    bundles: list[PromptBundle] = []
    for posting_id, group in dataset.groups.items():
        instances: Sequence[Instance] = (
            (group,) if granularity is Granularity.POSTING else group.entries
        )
        for instance in instances:
            bundles.append(
                build_prompt(instance, stats, if_result, by_posting.get(posting_id), variant)
            )
    logger.info(
        "prompts_built",
        variant=variant.kind.value,
        template_version=variant.template_version,
        granularity=granularity.value,
        bundles=len(bundles),
    )
    return bundles


def format_bundle(bundle: PromptBundle) -> str:
    """Human-readable rendering used by the ``prompt`` subcommand and golden files."""
    return (
        f"=== SYSTEM ({bundle.variant.kind.value}.{bundle.variant.template_version}) ===\n"
        f"{bundle.system_text}\n"
        f"=== INSTANCE ({bundle.instance_id}) ===\n"
        f"{bundle.instance_text}\n"
    )
