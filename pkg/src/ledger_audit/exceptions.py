"""Exception hierarchy for the ledger audit toolkit."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence


class LedgerAuditError(Exception):
    """Base exception for all ledger audit errors.

    Every error carries a ``module`` tag so the CLI can print
    module-tagged diagnostics.
    """

    module = "ledger_audit"

    def __init__(self, message: str = "An error occurred in ledger audit") -> None:
        self.message = message
        super().__init__(self.message)


# ---------------------------------------------------------------- config


class ConfigError(LedgerAuditError):
    """A run configuration file or override is invalid."""

    module = "config"


# ---------------------------------------------------------------- ledger-core


class LedgerError(LedgerAuditError):
    """Errors raised while reading or writing ledger files."""

    module = "ledger"


class MalformedRow(LedgerError):
    """A ledger row violates the schema or a field invariant."""

    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class DuplicateEntryId(LedgerError):
    """Two rows share the same entry_id."""

    def __init__(self, entry_id: str, line: int) -> None:
        self.entry_id = entry_id
        self.line = line
        super().__init__(f"line {line}: duplicate entry_id '{entry_id}'")


class UnknownColumn(LedgerError):
    """Strict mode found a column outside the schema."""

    def __init__(self, column: str) -> None:
        self.column = column
        super().__init__(f"unknown column '{column}'")


class MissingColumn(LedgerError):
    """A required schema column is absent from the header."""

    def __init__(self, column: str) -> None:
        self.column = column
        super().__init__(f"missing column '{column}'")


class IoFailure(LedgerError):
    """Reading or writing an artifact failed at the filesystem level."""

    def __init__(self, path: str | Path, reason: str) -> None:
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class LabelError(LedgerError):
    """Labels reference unknown postings or hold values other than 0/1."""


# ---------------------------------------------------------------- synthgen


class InfeasibleConfig(LedgerAuditError):
    """The generator cannot satisfy its configuration."""

    module = "synthgen"

    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"infeasible generator config: {reason}")


# ---------------------------------------------------------------- jet-rules


class MissingContext(LedgerAuditError):
    """A dataset-relative flag was requested without dataset statistics."""

    module = "jet"

    def __init__(self, flag: str) -> None:
        self.flag = flag
        super().__init__(f"flag '{flag}' needs dataset statistics")


# ---------------------------------------------------------------- iforest


class IForestError(LedgerAuditError):
    """Errors raised by the isolation forest."""

    module = "iforest"


class EmptyDataset(IForestError):
    """Scoring or statistics were requested over no data."""


class DegenerateFeatures(IForestError):
    """Every feature is constant, nothing can be split."""


class DomainError(IForestError):
    """A numeric helper was called outside its domain."""


# ---------------------------------------------------------------- context-stats


class EmptyStats(LedgerAuditError):
    """Percentile query against statistics with no amounts."""

    module = "stats"

    def __init__(self, message: str = "statistics hold no amounts") -> None:
        super().__init__(message)


class EmptyStatsDataset(EmptyDataset):
    """Statistics were requested over a dataset with no entries."""

    module = "stats"


# ---------------------------------------------------------------- prompt-forge


class PromptError(LedgerAuditError):
    """Errors raised while assembling prompts."""

    module = "prompt"


class MissingInput(PromptError):
    """The selected variant needs an input that was not supplied."""

    def __init__(self, variant: str, field: str) -> None:
        self.variant = variant
        self.field = field
        super().__init__(f"variant '{variant}' requires '{field}'")


class PlaceholderUnresolved(PromptError):
    """A template placeholder has no value."""

    def __init__(self, placeholders: Sequence[str]) -> None:
        self.placeholders = sorted(placeholders)
        super().__init__(f"unresolved placeholders: {', '.join(self.placeholders)}")


# ---------------------------------------------------------------- model-gateway


class ServiceError(LedgerAuditError):
    """Exception raised when a model backend fails."""

    module = "gateway"

    def __init__(
        self,
        message: str = "Model backend error",
        service_name: str = "unknown",
        original_error: Exception | None = None,
    ) -> None:
        self.service_name = service_name
        self.original_error = original_error
        super().__init__(f"[{service_name}] {message}")


class TransportError(ServiceError):
    """The HTTP backend stayed unreachable after all retry attempts."""

    def __init__(
        self,
        attempts: int,
        service_name: str = "HttpChatBackend",
        original_error: Exception | None = None,
    ) -> None:
        self.attempts = attempts
        detail = f": {original_error}" if original_error else ""
        super().__init__(
            message=f"transport failed after {attempts} attempt(s){detail}",
            service_name=service_name,
            original_error=original_error,
        )


class ReplayMiss(ServiceError):
    """The replay cache has no recorded response for a prompt."""

    def __init__(self, keys: Sequence[str], posting_ids: Sequence[str]) -> None:
        self.keys = list(keys)
        self.posting_ids = list(posting_ids)
        super().__init__(
            message=f"no recorded response for posting(s) {', '.join(self.posting_ids)}",
            service_name="ReplayBackend",
        )


class AuthMissing(ServiceError):
    """The configured auth token environment variable is unset."""

    def __init__(self, env_var: str) -> None:
        self.env_var = env_var
        super().__init__(
            message=f"environment variable '{env_var}' is not set",
            service_name="HttpChatBackend",
        )


class ParseFailure(LedgerAuditError):
    """A model response holds no usable verdict object."""

    module = "gateway"

    def __init__(self, reason: str, raw: str = "") -> None:
        self.reason = reason
        self.raw = raw
        super().__init__(f"unparseable verdict: {reason}")


# ---------------------------------------------------------------- eval-bench


class EvaluationError(LedgerAuditError):
    """Errors raised by the evaluation harness."""

    module = "eval"


class MissingLabel(EvaluationError):
    """A prediction has no label in strict mode."""

    def __init__(self, posting_id: str) -> None:
        self.posting_id = posting_id
        super().__init__(f"no label for posting '{posting_id}'")


class LabelSetMismatch(EvaluationError):
    """Reports being compared were computed over different label sets."""


# ---------------------------------------------------------------- pipeline


class PipelineError(LedgerAuditError):
    """Exception raised when the detect pipeline fails.

    Wraps the module error that stopped the run together with the stage.
    """

    module = "pipeline"

    def __init__(
        self,
        message: str = "Pipeline processing error",
        stage: str = "unknown",
        original_error: LedgerAuditError | None = None,
    ) -> None:
        self.stage = stage
        self.original_error = original_error
        if original_error is not None:
            self.module = original_error.module
        super().__init__(f"Pipeline failed at stage '{stage}': {message}")
