"""Detect and ablate orchestration over one timestamped run directory."""

from __future__ import annotations

import inspect
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import httpx
import structlog

from src.ledger_audit.config import settings
from src.ledger_audit.core.context_stats import compute_stats, stats_report
from src.ledger_audit.core.iforest import SCORE_COLUMNS, fit_score, score_rows
from src.ledger_audit.core.jet_rules import FLAG_COLUMNS, flag_rows, flag_table, pseudo_label
from src.ledger_audit.core.ledger_io import (
    attach_labels,
    load_dataset,
    write_dataset,
    write_jsonl,
    write_labels,
    write_report,
    write_rows,
    write_text,
)
from src.ledger_audit.core.metrics import (
    aggregate_verdicts,
    compare,
    evaluate_predictions,
    render_table,
    report_label,
)
from src.ledger_audit.core.prompt_forge import build_prompts
from src.ledger_audit.core.synthgen import generate
from src.ledger_audit.exceptions import IoFailure, LedgerAuditError, PipelineError
from src.ledger_audit.logging import scrub
from src.ledger_audit.models.evaluation import ComparisonTable, EvalReport
from src.ledger_audit.models.iforest import Decision, IForestResult
from src.ledger_audit.models.jet import JetFlags
from src.ledger_audit.models.ledger import Dataset
from src.ledger_audit.models.prompt import PromptBundle, PromptKind, PromptVariant
from src.ledger_audit.models.run import RunConfig
from src.ledger_audit.models.stats import DatasetStats
from src.ledger_audit.models.verdict import VERDICT_COLUMNS, ModelVerdict
from src.ledger_audit.services.gateway import ChatBackend, ModelGateway

logger = structlog.get_logger(__name__)

IFOREST_METHOD = "Isolation Forest"
BASELINE_VARIANT = "baseline"


class PipelineStage(str, Enum):
    """Stages of a detect run."""

    LOAD = "load"
    LABEL = "label"
    IFOREST = "iforest"
    STATS = "stats"
    JET = "jet"
    PROMPTS = "prompts"
    INFER = "infer"
    EVALUATE = "evaluate"
    PERSIST = "persist"


@dataclass
class StageResult:
    """Result of a pipeline stage execution."""

    stage: PipelineStage
    success: bool
    duration_ms: float
    data: Any = None
    error: Optional[str] = None


@dataclass
class PipelineResult:
    """Result of a detect or ablate run."""

    success: bool
    total_duration_ms: float
    run_dir: Path
    stages: list[StageResult] = field(default_factory=list)
    reports: list[EvalReport] = field(default_factory=list)
    verdicts: list[ModelVerdict] = field(default_factory=list)
    comparison: Optional[ComparisonTable] = None

    @property
    def report(self) -> Optional[EvalReport]:
        """The detect report, or the first variant report of an ablation."""
        return self.reports[0] if self.reports else None

    @property
    def failed_stage(self) -> Optional[PipelineStage]:
        for stage in self.stages:
            if not stage.success:
                return stage.stage
        return None


@dataclass
class _RunState:
    dataset: Optional[Dataset] = None
    if_result: Optional[IForestResult] = None
    stats: Optional[DatasetStats] = None
    flags: list[JetFlags] = field(default_factory=list)


def new_run_dir(base: str | Path, command: str) -> Path:
    """Create ``<base>/<command>-<UTC timestamp>``.

    Raises:
        IoFailure: If the directory cannot be created.
    """
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    run_dir = Path(base) / f"{command}-{stamp}"
    try:
        run_dir.mkdir(parents=True, exist_ok=False)
    except OSError as e:
        raise IoFailure(run_dir, e.strerror or str(e)) from e
    return run_dir


class DetectPipeline:
    """Runs the detection workflow for one RunConfig.

    Executes stages in sequence:
    1. Load or generate the ledger
    2. Attach ground-truth labels, or pseudo-label with JET verdicts
    3. Fit and score the isolation forest
    4. Compute dataset context statistics
    5. Compute JET flags
    6. Build prompt bundles
    7. Collect model verdicts
    8. Evaluate verdicts against the labels
    9. Persist reports

    Every artifact lands under one run directory. A module error stops the
    run and is raised as PipelineError tagged with the failing stage.
    """

    def __init__(
        self,
        config: RunConfig,
        backend: ChatBackend | None = None,
        client: httpx.AsyncClient | None = None,
        run_dir: str | Path | None = None,
    ) -> None:
        """Initialize the pipeline.

        Args:
            config: Validated run configuration.
            backend: Optional backend overriding ``config.backend.kind``.
            client: Optional httpx client for the HTTP backend.
            run_dir: Existing directory to use instead of a new timestamped one.
        """
        self.config = config
        self.backend = backend
        self.client = client
        self._run_dir = Path(run_dir) if run_dir is not None else None
        self._stages: list[StageResult] = []
        self._errors: list[dict[str, Any]] = []
        self._state = _RunState()

    @property
    def method_name(self) -> str:
        return self.config.method_name or self.config.backend.model_name

    @property
    def run_dir(self) -> Path:
        if self._run_dir is None:
            raise RuntimeError("run directory not prepared")
        return self._run_dir

    def _prepare(self, command: str) -> Path:
        if self._run_dir is None:
            base = self.config.output_dir or settings.output_dir
            self._run_dir = new_run_dir(base, command)
        else:
            self._run_dir.mkdir(parents=True, exist_ok=True)
        self._stages = []
        self._errors = []
        self._state = _RunState()
        write_report(self.config.echo(), self.run_dir / "config.json")
        structlog.contextvars.bind_contextvars(run_dir=str(self.run_dir))
        return self.run_dir

    def _run_metadata(self, variant: PromptVariant) -> dict[str, Any]:
        return {
            "seed": self.config.iforest.seed,
            "gen_seed": self.config.gen.seed if self.config.gen else None,
            "backend": self.config.backend.kind.value,
            "model_name": self.config.backend.model_name,
            "variant": variant.kind.value,
            "template_version": variant.template_version,
            "granularity": self.config.granularity.value,
        }

    async def _stage(self, stage: PipelineStage, func: Callable[..., Any], *args: Any) -> Any:
        """Run one stage, timing it and wrapping module errors."""
        start = time.monotonic()
        try:
            result = func(*args)
            if inspect.isawaitable(result):
                result = await result
        except LedgerAuditError as e:
            duration = (time.monotonic() - start) * 1000
            self._stages.append(StageResult(stage, False, duration, error=str(e)))
            self._errors.append({"stage": stage.value, "module": e.module, "error": str(e)})
            logger.error("stage_failed", stage=stage.value, module=e.module, error=str(e))
            self._flush_errors()
            raise PipelineError(str(e), stage.value, e) from e
        duration = (time.monotonic() - start) * 1000
        self._stages.append(StageResult(stage, True, duration))
        logger.info("stage_completed", stage=stage.value, duration_ms=round(duration, 2))
        return result

    def _flush_errors(self) -> None:
        try:
            write_jsonl(self.run_dir / "errors.jsonl", self._errors)
        except LedgerAuditError:
            logger.warning("errors_not_written", run_dir=str(self.run_dir))

    # ------------------------------------------------------------ shared stages

    def _load(self) -> Dataset:
        config = self.config
        if config.dataset_path is not None:
            dataset = load_dataset(config.dataset_path, config.format, config.strict)
            if config.labels_path is not None:
                dataset = attach_labels(dataset, config.labels_path)
            return dataset

        assert config.gen is not None
        labeled = generate(config.gen)
        suffix = config.format.value
        write_dataset(labeled.dataset, self.run_dir / f"dataset.{suffix}", config.format)
        write_labels(
            self.run_dir / "labels.csv",
            labeled.dataset.labels or {},
            labeled.injected_archetypes,
        )
        return labeled.dataset

    def _label(self, dataset: Dataset) -> Dataset:
        if dataset.is_labeled or not self.config.pseudo_label:
            return dataset
        labeled = pseudo_label(dataset, self.config.jet)
        write_labels(self.run_dir / "labels.csv", labeled.labels or {})
        logger.info(
            "pseudo_labels_assigned",
            postings=len(labeled.posting_ids),
            anomalies=sum((labeled.labels or {}).values()),
        )
        return labeled

    def _iforest(self, dataset: Dataset) -> IForestResult:
        result = fit_score(dataset, self.config.iforest)
        write_rows(self.run_dir / "iforest.csv", SCORE_COLUMNS, score_rows(result))
        return result

    def _stats(self, dataset: Dataset, if_result: IForestResult) -> DatasetStats:
        stats = compute_stats(dataset, if_result)
        write_report(stats_report(stats), self.run_dir / "stats.json")
        return stats

    def _jet(self, dataset: Dataset, stats: DatasetStats) -> list[JetFlags]:
        flags = flag_table(dataset, self.config.jet, stats)
        write_rows(self.run_dir / "jet.csv", FLAG_COLUMNS, flag_rows(flags))
        return flags

    async def _prepare_inputs(self) -> _RunState:
        state = self._state
        state.dataset = await self._stage(PipelineStage.LOAD, self._load)
        state.dataset = await self._stage(PipelineStage.LABEL, self._label, state.dataset)
        state.if_result = await self._stage(PipelineStage.IFOREST, self._iforest, state.dataset)
        state.stats = await self._stage(
            PipelineStage.STATS, self._stats, state.dataset, state.if_result
        )
        state.flags = await self._stage(PipelineStage.JET, self._jet, state.dataset, state.stats)
        return state

    # ------------------------------------------------------------ variant stages

    def _prompts(self, variant: PromptVariant, out_dir: Path) -> list[PromptBundle]:
        state = self._state
        assert state.dataset is not None
        bundles = build_prompts(
            state.dataset,
            variant,
            state.stats,
            state.if_result,
            state.flags,
            self.config.granularity,
        )
        model_name = self.config.backend.model_name
        write_jsonl(
            out_dir / "prompts.jsonl",
            (
                {
                    "posting_id": b.posting_id,
                    "instance_id": b.instance_id,
                    "variant": b.variant.kind.value,
                    "template_version": b.variant.template_version,
                    "key": b.cache_key(model_name),
                    "system_text": b.system_text,
                    "instance_text": b.instance_text,
                }
                for b in bundles
            ),
        )
        return bundles

    async def _infer(
        self,
        gateway: ModelGateway,
        bundles: Sequence[PromptBundle],
        out_dir: Path,
    ) -> list[ModelVerdict]:
        verdicts = await gateway.infer_batch(bundles)
        model_name = self.config.backend.model_name
        write_jsonl(
            out_dir / "responses.jsonl",
            (
                {
                    "posting_id": b.posting_id,
                    "instance_id": b.instance_id,
                    "key": b.cache_key(model_name),
                    "raw_response": scrub(v.raw_response),
                }
                for b, v in zip(bundles, verdicts)
            ),
        )
        write_rows(out_dir / "verdicts.csv", VERDICT_COLUMNS, (v.to_row() for v in verdicts))
        for verdict in verdicts:
            if verdict.failed:
                self._errors.append(
                    {
                        "stage": PipelineStage.INFER.value,
                        "module": "gateway",
                        "posting_id": verdict.posting_id,
                        "instance_id": verdict.instance_id,
                        "error": verdict.error,
                    }
                )
        return verdicts

    def _evaluate(
        self, variant: PromptVariant, verdicts: Sequence[ModelVerdict]
    ) -> Optional[EvalReport]:
        dataset = self._state.dataset
        assert dataset is not None
        if dataset.labels is None:
            logger.warning("evaluation_skipped", reason="dataset has no labels")
            return None
        predictions, excluded = aggregate_verdicts(verdicts)
        return evaluate_predictions(
            self.method_name,
            variant.label,
            predictions,
            dataset.labels,
            excluded_ids=excluded,
            label_provenance=dataset.label_provenance.value,
            run_metadata=self._run_metadata(variant),
            strict=self.config.strict,
        )

    def iforest_baseline(self) -> Optional[EvalReport]:
        """The isolation forest decisions evaluated as a method of their own."""
        dataset, if_result = self._state.dataset, self._state.if_result
        if dataset is None or dataset.labels is None or if_result is None:
            return None
        predictions = {pid: int(d is Decision.ANOMALY) for pid, d in if_result.decisions.items()}
        return evaluate_predictions(
            IFOREST_METHOD,
            BASELINE_VARIANT,
            predictions,
            dataset.labels,
            label_provenance=dataset.label_provenance.value,
            run_metadata={"seed": self.config.iforest.seed},
            strict=self.config.strict,
        )

    def _persist(self, out_dir: Path, report: Optional[EvalReport]) -> None:
        if report is not None:
            write_report(report, out_dir / "report.json")
            table = compare([report], self.config.metric_averaging)
            write_text(render_table(table), out_dir / "report.txt")
        self._flush_errors()

    async def _run_variant(
        self,
        gateway: ModelGateway,
        variant: PromptVariant,
        out_dir: Path,
    ) -> tuple[list[ModelVerdict], Optional[EvalReport]]:
        out_dir.mkdir(parents=True, exist_ok=True)
        bundles = await self._stage(PipelineStage.PROMPTS, self._prompts, variant, out_dir)
        verdicts = await self._stage(PipelineStage.INFER, self._infer, gateway, bundles, out_dir)
        report = await self._stage(PipelineStage.EVALUATE, self._evaluate, variant, verdicts)
        return verdicts, report

    def _gateway(self) -> ModelGateway:
        try:
            return ModelGateway(self.config.backend, backend=self.backend, client=self.client)
        except LedgerAuditError as e:
            self._errors.append(
                {"stage": PipelineStage.INFER.value, "module": e.module, "error": str(e)}
            )
            self._flush_errors()
            raise PipelineError(str(e), PipelineStage.INFER.value, e) from e

    # ------------------------------------------------------------ entry points

    async def run(self) -> PipelineResult:
        """Execute a detect run.

        Returns:
            PipelineResult carrying the verdicts and, when labels exist, the report.

        Raises:
            PipelineError: Wrapping the module error that stopped the run.
        """
        start_time = time.monotonic()
        self._prepare("detect")
        variant = self.config.variant
        logger.info(
            "pipeline_starting",
            command="detect",
            variant=variant.kind.value,
            backend=self.config.backend.kind.value,
        )
        try:
            await self._prepare_inputs()
            async with self._gateway() as gateway:
                verdicts, report = await self._run_variant(gateway, variant, self.run_dir)
            await self._stage(PipelineStage.PERSIST, self._persist, self.run_dir, report)
        finally:
            structlog.contextvars.unbind_contextvars("run_dir")

        total_duration = (time.monotonic() - start_time) * 1000
        logger.info(
            "pipeline_completed",
            command="detect",
            run_dir=str(self.run_dir),
            total_duration_ms=round(total_duration, 2),
            verdicts=len(verdicts),
        )
        return PipelineResult(
            success=True,
            total_duration_ms=total_duration,
            run_dir=self.run_dir,
            stages=list(self._stages),
            reports=[report] if report is not None else [],
            verdicts=verdicts,
        )

    async def ablate(self, include_baseline: bool = True) -> PipelineResult:
        """Run every configured prompt variant over the same inputs and compare.

        Each variant writes its prompts, responses, verdicts and report under
        ``<run_dir>/<variant kind>/``. With ``include_baseline`` the isolation
        forest decisions join the table as the baseline row; otherwise the
        first variant is the baseline.

        Raises:
            PipelineError: Wrapping the module error that stopped the run, or
                an EvaluationError when the dataset carries no labels.
        """
        start_time = time.monotonic()
        self._prepare("ablate")
        kinds: Sequence[PromptKind] = self.config.ablation_kinds
        logger.info(
            "pipeline_starting",
            command="ablate",
            variants=[k.value for k in kinds],
            backend=self.config.backend.kind.value,
        )
        reports: list[EvalReport] = []
        try:
            await self._prepare_inputs()
            async with self._gateway() as gateway:
                for kind in kinds:
                    variant = PromptVariant(
                        kind=kind, template_version=self.config.variant.template_version
                    )
                    out_dir = self.run_dir / kind.value
                    _, report = await self._run_variant(gateway, variant, out_dir)
                    await self._stage(PipelineStage.PERSIST, self._persist, out_dir, report)
                    if report is not None:
                        reports.append(report)

            baseline = self.iforest_baseline() if include_baseline else None
            table = await self._stage(PipelineStage.EVALUATE, self._compare, reports, baseline)
            await self._stage(
                PipelineStage.PERSIST, self._persist_comparison, table, reports, baseline
            )
        finally:
            structlog.contextvars.unbind_contextvars("run_dir")

        total_duration = (time.monotonic() - start_time) * 1000
        logger.info(
            "pipeline_completed",
            command="ablate",
            run_dir=str(self.run_dir),
            total_duration_ms=round(total_duration, 2),
            variants=len(reports),
        )
        return PipelineResult(
            success=True,
            total_duration_ms=total_duration,
            run_dir=self.run_dir,
            stages=list(self._stages),
            reports=reports,
            comparison=table,
        )

    def _compare(
        self, reports: list[EvalReport], baseline: Optional[EvalReport]
    ) -> ComparisonTable:
        if baseline is None:
            return compare(reports, self.config.metric_averaging)
        return compare(
            [baseline, *reports], self.config.metric_averaging, baseline=report_label(baseline)
        )

    def _persist_comparison(
        self,
        table: ComparisonTable,
        reports: list[EvalReport],
        baseline: Optional[EvalReport],
    ) -> None:
        all_reports = [baseline, *reports] if baseline is not None else reports
        write_report(
            {"comparison": table, "reports": all_reports},
            self.run_dir / "comparison.json",
        )
        write_text(render_table(table), self.run_dir / "comparison.txt")
        self._flush_errors()


async def detect(config: RunConfig, backend: ChatBackend | None = None) -> PipelineResult:
    """Run detect for ``config``."""
    return await DetectPipeline(config, backend=backend).run()


async def ablate(
    config: RunConfig, backend: ChatBackend | None = None, include_baseline: bool = True
) -> PipelineResult:
    """Run the prompt ablation for ``config``."""
    return await DetectPipeline(config, backend=backend).ablate(include_baseline)


__all__ = [
    "DetectPipeline",
    "PipelineResult",
    "PipelineStage",
    "StageResult",
    "ablate",
    "detect",
    "new_run_dir",
]
