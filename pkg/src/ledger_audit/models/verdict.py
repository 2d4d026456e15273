"""Model backend configuration and parsed verdicts."""

from __future__ import annotations

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


# Columns of the per-instance verdict file; raw responses live in responses.jsonl
VERDICT_COLUMNS: tuple[str, ...] = (
    "posting_id",
    "instance_id",
    "anomaly",
    "confidence",
    "parse_status",
    "explanation",
    "error",
)


class BackendKind(str, Enum):
    HTTP = "http"
    MOCK_RULE_ORACLE = "mock_rule_oracle"
    REPLAY = "replay"


class ParseStatus(str, Enum):
    CLEAN = "clean"
    REPAIRED = "repaired"
    FAILED = "failed"


class BackendConfig(BaseModel):
    """How verdicts are obtained for prompt bundles."""

    kind: BackendKind = BackendKind.MOCK_RULE_ORACLE
    endpoint_url: Optional[str] = None
    model_name: str = "mock-rule-oracle"
    temperature: float = Field(default=0.0, ge=0.0)
    max_output_tokens: int = Field(default=256, gt=0)
    timeout: float = Field(default=30.0, gt=0.0)
    max_retries: int = Field(default=3, ge=0)
    max_in_flight: int = Field(default=4, ge=1)
    auth_token_env_var: Optional[str] = None
    replay_path: Optional[str] = None
    record_path: Optional[str] = None
    strict_json: bool = False
    fail_fast: bool = False
    # Exponential backoff between retries, seconds
    backoff_multiplier: float = Field(default=1.0, ge=0.0)
    backoff_max: float = Field(default=30.0, ge=0.0)

    model_config = ConfigDict(frozen=True, protected_namespaces=())

    @model_validator(mode="after")
    def _check_kind_requirements(self) -> "BackendConfig":
        if self.kind is BackendKind.HTTP and not self.endpoint_url:
            raise ValueError("http backend needs endpoint_url")
        if self.kind is BackendKind.REPLAY and not self.replay_path:
            raise ValueError("replay backend needs replay_path")
        return self


class ParsedVerdict(BaseModel):
    """Fields recovered from one raw model response."""

    anomaly: int = Field(ge=0, le=1)
    confidence: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    explanation: str = ""
    parse_status: ParseStatus = ParseStatus.CLEAN

    model_config = ConfigDict(frozen=True)


class ModelVerdict(BaseModel):
    """A model decision for one prompt bundle, with its raw response."""

    posting_id: str
    instance_id: str
    anomaly: Optional[int] = Field(default=None, ge=0, le=1)
    confidence: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    explanation: str = ""
    raw_response: str = ""
    parse_status: ParseStatus = ParseStatus.CLEAN
    latency_ms: float = 0.0
    error: Optional[str] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _failed_has_no_anomaly(self) -> "ModelVerdict":
        if (self.parse_status is ParseStatus.FAILED) != (self.anomaly is None):
            raise ValueError("anomaly is absent exactly when parsing failed")
        return self

    @property
    def failed(self) -> bool:
        return self.parse_status is ParseStatus.FAILED

    def to_row(self) -> tuple[str, ...]:
        """Row matching ``VERDICT_COLUMNS``; latency is left out for reproducibility."""
        return (
            self.posting_id,
            self.instance_id,
            "" if self.anomaly is None else str(self.anomaly),
            "" if self.confidence is None else repr(self.confidence),
            self.parse_status.value,
            self.explanation,
            self.error or "",
        )
