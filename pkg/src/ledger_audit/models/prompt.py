"""Prompt variants and assembled prompt bundles."""

from __future__ import annotations

import hashlib
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field

TEMPLATE_VERSION = "v1"


class PromptKind(str, Enum):
    """Prompt ablation arms."""

    AUDIT_COPILOT = "audit_copilot"
    NO_IF = "no_if"
    NO_STATS_NO_IF = "no_stats_no_if"
    SYNTHETIC_FLAGS = "synthetic_flags"


# Display names used in comparison tables
KIND_LABELS: dict[PromptKind, str] = {
    PromptKind.AUDIT_COPILOT: "AuditCopilot",
    PromptKind.NO_IF: "w/o IF",
    PromptKind.NO_STATS_NO_IF: "w/o Stats, IF",
    PromptKind.SYNTHETIC_FLAGS: "SyntheticFlags",
}


class Dialect(str, Enum):
    """Response format expected from the model."""

    VANILLA = "vanilla"
    SYNTHETIC = "synthetic"


class PromptVariant(BaseModel):
    """One prompt arm at a pinned template version."""

    kind: PromptKind = PromptKind.AUDIT_COPILOT
    template_version: str = TEMPLATE_VERSION

    model_config = ConfigDict(frozen=True)

    @property
    def dialect(self) -> Dialect:
        if self.kind is PromptKind.SYNTHETIC_FLAGS:
            return Dialect.SYNTHETIC
        return Dialect.VANILLA

    @property
    def label(self) -> str:
        return KIND_LABELS[self.kind]


class PromptBundle(BaseModel):
    """A fully interpolated prompt for one instance.

    ``posting_id`` keys evaluation; ``instance_id`` is the posting id for
    posting-level prompts and the entry id for transaction-level prompts.
    """

    system_text: str
    instance_text: str
    posting_id: str
    instance_id: str
    variant: PromptVariant
    interpolation_record: dict[str, str] = Field(default_factory=dict)

    model_config = ConfigDict(frozen=True)

    def cache_key(self, model_name: str) -> str:
        """Replay key: sha256 over system text, instance text and model name."""
        digest = hashlib.sha256()
        digest.update((self.system_text + self.instance_text + model_name).encode("utf-8"))
        return digest.hexdigest()
