"""Command line entry point.

Subcommands mirror the module boundaries: generate, stats, jet, iforest,
prompt, detect, evaluate and ablate. ``detect`` and ``ablate`` are driven by
a RunConfig loaded from ``--config`` (a JSON document), ``generate`` by a
GenConfig or the ``gen`` section of a RunConfig. Every flag given on the
command line takes precedence over the file.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import structlog
from pydantic import ValidationError
from pydantic_core import to_jsonable_python

from src.ledger_audit import __version__
from src.ledger_audit.config import settings
from src.ledger_audit.core.context_stats import compute_stats, stats_report
from src.ledger_audit.core.iforest import SCORE_COLUMNS, fit_score, score_rows
from src.ledger_audit.core.jet_rules import FLAG_COLUMNS, flag_rows, flag_table
from src.ledger_audit.core.ledger_io import (
    load_dataset,
    load_labels,
    write_dataset,
    write_labels,
    write_report,
    write_rows,
    write_text,
)
from src.ledger_audit.core.metrics import (
    compare,
    evaluate_predictions,
    load_predictions,
    render_table,
)
from src.ledger_audit.core.prompt_forge import build_prompts, format_bundle
from src.ledger_audit.core.synthgen import describe, generate
from src.ledger_audit.exceptions import ConfigError, IoFailure, LedgerAuditError, PromptError
from src.ledger_audit.logging import configure_logging
from src.ledger_audit.models.evaluation import Averaging
from src.ledger_audit.models.iforest import IForestConfig
from src.ledger_audit.models.jet import JetConfig
from src.ledger_audit.models.ledger import DataFormat, Dataset
from src.ledger_audit.models.prompt import PromptKind, PromptVariant
from src.ledger_audit.models.run import Granularity, RunConfig
from src.ledger_audit.models.synth import GenConfig
from src.ledger_audit.models.verdict import BackendKind
from src.ledger_audit.pipeline.detect_pipeline import DetectPipeline, new_run_dir

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 2


# ---------------------------------------------------------------- helpers


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _emit_json(payload: Any) -> None:
    _emit(json.dumps(to_jsonable_python(payload), sort_keys=True, indent=2, ensure_ascii=False))


def _emit_rows(header: Sequence[str], rows: Sequence[Sequence[Any]], out: Optional[str]) -> None:
    if out:
        write_rows(out, header, rows)
        return
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)


def _strict(args: argparse.Namespace) -> bool:
    return True if args.strict is None else args.strict


def _load(args: argparse.Namespace) -> Dataset:
    return load_dataset(args.dataset, DataFormat(args.format), _strict(args))


def _iforest_config(args: argparse.Namespace) -> IForestConfig:
    values: dict[str, Any] = {}
    if getattr(args, "trees", None) is not None:
        values["n_trees"] = args.trees
    if getattr(args, "subsample", None) is not None:
        values["subsample_size"] = args.subsample
    if getattr(args, "threshold", None) is not None:
        values["score_threshold"] = args.threshold
        values["contamination"] = None
    elif getattr(args, "contamination", None) is not None:
        values["contamination"] = args.contamination
    if args.seed is not None:
        values["seed"] = args.seed
    try:
        return IForestConfig(**values)
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from e


def _jet_config(args: argparse.Namespace) -> JetConfig:
    values: dict[str, Any] = {}
    if getattr(args, "top_n", None) is not None:
        values["top_n_count"] = args.top_n
    if getattr(args, "cash_accounts", None):
        values["cash_account_ids"] = tuple(args.cash_accounts)
    try:
        return JetConfig(**values)
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from e


def _validation_message(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Nested update where override values win."""
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Read a RunConfig JSON document.

    Raises:
        IoFailure: If the file cannot be read.
        ConfigError: If it is not a JSON object.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(path, e.strerror or str(e)) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: a run config must be a JSON object")
    return data


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    """RunConfig fields set on the command line."""
    values: dict[str, Any] = {}
    if getattr(args, "dataset", None):
        values["dataset_path"] = args.dataset
        values["gen"] = None
    if getattr(args, "format", None):
        values["format"] = args.format
    if getattr(args, "labels", None):
        values["labels_path"] = args.labels
    if args.output_dir:
        values["output_dir"] = args.output_dir
    if args.strict is not None:
        values["strict"] = args.strict
    if getattr(args, "variant", None):
        values["variant"] = {"kind": args.variant}
    if getattr(args, "variants", None):
        values["ablation_kinds"] = list(args.variants)
    if getattr(args, "granularity", None):
        values["granularity"] = args.granularity
    if getattr(args, "averaging", None):
        values["metric_averaging"] = args.averaging
    if getattr(args, "method_name", None):
        values["method_name"] = args.method_name
    if getattr(args, "no_pseudo_label", False):
        values["pseudo_label"] = False

    backend: dict[str, Any] = {}
    for flag, key in (
        ("backend", "kind"),
        ("endpoint", "endpoint_url"),
        ("model", "model_name"),
        ("max_in_flight", "max_in_flight"),
        ("replay", "replay_path"),
        ("record", "record_path"),
        ("auth_env", "auth_token_env_var"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            backend[key] = value
    if getattr(args, "strict_json", False):
        backend["strict_json"] = True
    if getattr(args, "fail_fast", False):
        backend["fail_fast"] = True
    if backend:
        values["backend"] = backend
    return values


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """RunConfig from ``--config`` plus command-line overrides, then ``--seed``.

    Without any dataset the run generates a synthetic ledger with the
    default generator configuration.

    Raises:
        ConfigError: If the merged configuration is invalid.
    """
    data = read_config_file(args.config) if args.config else {}
    data = _merge(data, _overrides(args))
    if not data.get("dataset_path") and not data.get("gen"):
        data["gen"] = {}
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from e
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


# ---------------------------------------------------------------- commands


def build_gen_config(args: argparse.Namespace) -> GenConfig:
    """GenConfig from ``--config`` plus command-line overrides.

    The file may be a GenConfig document or a RunConfig whose ``gen``
    section is used.

    Raises:
        ConfigError: If the merged configuration is invalid.
    """
    values: dict[str, Any] = {}
    if args.config:
        data = read_config_file(args.config)
        section = data["gen"] if "gen" in data else data
        if section is None:
            section = {}
        if not isinstance(section, dict):
            raise ConfigError(f"{args.config}: 'gen' must be a JSON object")
        values.update(section)
    for flag, key in (
        ("postings", "n_postings"),
        ("anomaly_rate", "anomaly_rate"),
        ("users", "n_users"),
        ("accounts", "n_accounts"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag)
        if value is not None:
            values[key] = value
    try:
        return GenConfig(**values)
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from e


def cmd_generate(args: argparse.Namespace) -> int:
    config = build_gen_config(args)
    labeled = generate(config)
    out_dir = Path(args.out) if args.out else new_run_dir(
        args.output_dir or settings.output_dir, "generate"
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt = DataFormat(args.format)
    write_dataset(labeled.dataset, out_dir / f"dataset.{fmt.value}", fmt)
    write_labels(out_dir / "labels.csv", labeled.dataset.labels or {}, labeled.injected_archetypes)
    write_report(config, out_dir / "gen_config.json")
    summary = describe(labeled)
    write_report(summary, out_dir / "summary.json")
    _emit_json({"out_dir": str(out_dir), "summary": summary})
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    dataset = _load(args)
    if_result = fit_score(dataset, _iforest_config(args)) if args.with_iforest else None
    report = stats_report(compute_stats(dataset, if_result))
    if args.out:
        write_report(report, args.out)
    else:
        _emit_json(report)
    return EXIT_OK


def cmd_jet(args: argparse.Namespace) -> int:
    dataset = _load(args)
    flags = flag_table(dataset, _jet_config(args))
    _emit_rows(FLAG_COLUMNS, flag_rows(flags), args.out)
    return EXIT_OK


def cmd_iforest(args: argparse.Namespace) -> int:
    dataset = _load(args)
    result = fit_score(dataset, _iforest_config(args))
    _emit_rows(SCORE_COLUMNS, score_rows(result), args.out)
    return EXIT_OK


def cmd_prompt(args: argparse.Namespace) -> int:
    dataset = _load(args)
    if_result = fit_score(dataset, _iforest_config(args))
    stats = compute_stats(dataset, if_result)
    flags = flag_table(dataset, _jet_config(args), stats)
    variant = PromptVariant(kind=PromptKind(args.variant))
    bundles = build_prompts(
        dataset, variant, stats, if_result, flags, Granularity(args.granularity)
    )
    if args.posting_id:
        bundles = [b for b in bundles if b.posting_id == args.posting_id]
        if not bundles:
            raise PromptError(f"unknown posting '{args.posting_id}'")
    for bundle in bundles[: args.limit]:
        _emit(format_bundle(bundle))
    return EXIT_OK


def cmd_detect(args: argparse.Namespace) -> int:
    config = build_run_config(args)
    result = asyncio.run(DetectPipeline(config).run())
    _emit(f"run_dir: {result.run_dir}")
    if result.report is not None:
        table = compare([result.report], config.metric_averaging)
        _emit(render_table(table))
    else:
        _emit(f"verdicts: {len(result.verdicts)} (no labels, evaluation skipped)")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = build_run_config(args)
    result = asyncio.run(DetectPipeline(config).ablate(include_baseline=not args.no_baseline))
    _emit(f"run_dir: {result.run_dir}")
    if result.comparison is not None:
        _emit(render_table(result.comparison))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    labels, _ = load_labels(args.labels)
    reports = []
    for path in args.predictions:
        kind, predictions, excluded = load_predictions(path)
        reports.append(
            evaluate_predictions(
                Path(path).stem,
                kind,
                predictions,
                labels,
                excluded_ids=excluded,
                label_provenance=args.provenance,
                run_metadata={"source": str(path)},
                strict=_strict(args),
            )
        )
    averaging = Averaging(args.averaging)
    table = compare(reports, averaging, baseline=args.baseline)
    if args.out:
        write_report({"comparison": table, "reports": reports}, args.out)
        write_text(render_table(table), Path(args.out).with_suffix(".txt"))
    _emit(render_table(table))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON document")
    common.add_argument("--seed", type=int, help="Seed for every stochastic component")
    common.add_argument("--output-dir", help="Parent directory of run directories")
    strictness = common.add_mutually_exclusive_group()
    strictness.add_argument(
        "--strict", dest="strict", action="store_true", default=None, help="Fail on schema deviations"
    )
    strictness.add_argument(
        "--lenient", dest="strict", action="store_false", help="Skip what strict mode rejects"
    )
    common.add_argument("--log-level", help="Override LEDGER_AUDIT_LOG_LEVEL")
    common.set_defaults(strict=None)
    return common


def _add_dataset(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument(
        "dataset", nargs=None if required else "?", help="Ledger file (CSV or JSONL)"
    )
    parser.add_argument(
        "--format",
        choices=[f.value for f in DataFormat],
        default=DataFormat.CSV.value if required else None,
    )


def _add_iforest(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--trees", type=int, help="Number of isolation trees")
    parser.add_argument("--subsample", type=int, help="Subsample size per tree")
    threshold = parser.add_mutually_exclusive_group()
    threshold.add_argument("--contamination", type=float, help="Fraction flagged as anomalies")
    threshold.add_argument("--threshold", type=float, help="Absolute score cut-off")


def _add_jet(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--top-n", type=int, help="Posting amount rank cut-off for top_n")
    parser.add_argument("--cash-accounts", nargs="+", help="Cash account ids")


def _add_run(parser: argparse.ArgumentParser) -> None:
    _add_dataset(parser, required=False)
    parser.add_argument("--labels", help="Ground-truth labels CSV")
    parser.add_argument("--granularity", choices=[g.value for g in Granularity])
    parser.add_argument("--averaging", choices=[a.value for a in Averaging])
    parser.add_argument("--method-name", help="Method name shown in reports")
    parser.add_argument(
        "--no-pseudo-label", action="store_true", help="Do not label unlabeled ledgers with JET"
    )
    parser.add_argument("--backend", choices=[k.value for k in BackendKind])
    parser.add_argument("--endpoint", help="Chat-completion endpoint URL")
    parser.add_argument("--model", help="Model name sent to the backend")
    parser.add_argument("--max-in-flight", type=int, help="Concurrent backend requests")
    parser.add_argument("--replay", help="Replay fixture JSONL")
    parser.add_argument("--record", help="Write a replay fixture of this run")
    parser.add_argument("--auth-env", help="Environment variable holding the auth token")
    parser.add_argument("--strict-json", action="store_true", help="Disable response repair")
    parser.add_argument("--fail-fast", action="store_true", help="Abort on the first parse failure")


def build_cli() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="ledger-audit",
        description="Journal entry anomaly detection with rules, isolation forests and LLMs.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p_generate = sub.add_parser("generate", parents=[common], help="Generate a synthetic ledger")
    p_generate.add_argument("--postings", type=int)
    p_generate.add_argument("--anomaly-rate", type=float)
    p_generate.add_argument("--users", type=int)
    p_generate.add_argument("--accounts", type=int)
    p_generate.add_argument(
        "--format", choices=[f.value for f in DataFormat], default=DataFormat.CSV.value
    )
    p_generate.add_argument("--out", help="Target directory (default: a new run directory)")
    p_generate.set_defaults(func=cmd_generate)

    p_stats = sub.add_parser("stats", parents=[common], help="Dataset context statistics")
    _add_dataset(p_stats)
    _add_iforest(p_stats)
    p_stats.add_argument(
        "--with-iforest", action="store_true", help="Include isolation forest anomaly counts"
    )
    p_stats.add_argument("--out", help="Write JSON here instead of stdout")
    p_stats.set_defaults(func=cmd_stats)

    p_jet = sub.add_parser("jet", parents=[common], help="JET flags per posting")
    _add_dataset(p_jet)
    _add_jet(p_jet)
    p_jet.add_argument("--out", help="Write CSV here instead of stdout")
    p_jet.set_defaults(func=cmd_jet)

    p_iforest = sub.add_parser("iforest", parents=[common], help="Isolation forest scores")
    _add_dataset(p_iforest)
    _add_iforest(p_iforest)
    p_iforest.add_argument("--out", help="Write CSV here instead of stdout")
    p_iforest.set_defaults(func=cmd_iforest)

    p_prompt = sub.add_parser("prompt", parents=[common], help="Render prompt bundles")
    _add_dataset(p_prompt)
    _add_iforest(p_prompt)
    _add_jet(p_prompt)
    p_prompt.add_argument(
        "--variant", choices=[k.value for k in PromptKind], default=PromptKind.AUDIT_COPILOT.value
    )
    p_prompt.add_argument(
        "--granularity", choices=[g.value for g in Granularity], default=Granularity.POSTING.value
    )
    p_prompt.add_argument("--posting-id", help="Only render this posting")
    p_prompt.add_argument("--limit", type=int, default=1, help="Maximum bundles to print")
    p_prompt.set_defaults(func=cmd_prompt)

    p_detect = sub.add_parser("detect", parents=[common], help="Run the detection pipeline")
    _add_run(p_detect)
    p_detect.add_argument("--variant", choices=[k.value for k in PromptKind])
    p_detect.set_defaults(func=cmd_detect)

    p_evaluate = sub.add_parser(
        "evaluate", parents=[common], help="Evaluate verdict, jet or iforest files"
    )
    p_evaluate.add_argument("predictions", nargs="+", help="verdicts.csv, jet.csv or iforest.csv")
    p_evaluate.add_argument("--labels", required=True, help="Labels CSV")
    p_evaluate.add_argument(
        "--averaging", choices=[a.value for a in Averaging], default=Averaging.MACRO.value
    )
    p_evaluate.add_argument("--baseline", help="'method / variant' of the baseline row")
    p_evaluate.add_argument(
        "--provenance", default="ground_truth", help="Label provenance recorded in reports"
    )
    p_evaluate.add_argument("--out", help="Write the comparison JSON here")
    p_evaluate.set_defaults(func=cmd_evaluate)

    p_ablate = sub.add_parser("ablate", parents=[common], help="Compare prompt variants")
    _add_run(p_ablate)
    p_ablate.add_argument("--variants", nargs="+", choices=[k.value for k in PromptKind])
    p_ablate.add_argument(
        "--no-baseline", action="store_true", help="Leave the isolation forest row out"
    )
    p_ablate.set_defaults(func=cmd_ablate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_cli()
    args = parser.parse_args(argv)
    configure_logging(
        level=args.log_level or settings.log_level,
        log_format=settings.log_format,
        log_file=settings.log_file,
        retention_days=settings.log_retention_days,
    )
    try:
        return int(args.func(args))
    except LedgerAuditError as e:
        logger.debug("command_failed", command=args.command, module=e.module, error=str(e))
        sys.stderr.write(f"error[{e.module}]: {e}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
