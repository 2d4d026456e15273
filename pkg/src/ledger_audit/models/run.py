"""Declarative run configuration for detect and ablate."""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.ledger_audit.models.evaluation import Averaging
from src.ledger_audit.models.iforest import IForestConfig
from src.ledger_audit.models.jet import JetConfig
from src.ledger_audit.models.ledger import DataFormat
from src.ledger_audit.models.prompt import PromptKind, PromptVariant
from src.ledger_audit.models.synth import GenConfig
from src.ledger_audit.models.verdict import BackendConfig

ABLATION_KINDS: tuple[PromptKind, ...] = (
    PromptKind.AUDIT_COPILOT,
    PromptKind.NO_IF,
    PromptKind.NO_STATS_NO_IF,
)


class Granularity(str, Enum):
    """Unit sent to the model: one posting group or one ledger line."""

    POSTING = "posting"
    TRANSACTION = "transaction"


class RunConfig(BaseModel):
    """Everything a detect or ablate run needs.

    Either ``dataset_path`` names an existing ledger, or ``gen`` describes a
    synthetic ledger generated into the run directory.
    Unless ``jet`` is given, a generated ledger is flagged with
    ``gen.jet_config()``.
    """

    dataset_path: Optional[str] = None
    format: DataFormat = DataFormat.CSV
    labels_path: Optional[str] = None
    gen: Optional[GenConfig] = None
    jet: JetConfig = Field(default_factory=JetConfig)
    iforest: IForestConfig = Field(default_factory=IForestConfig)
    variant: PromptVariant = Field(default_factory=PromptVariant)
    ablation_kinds: tuple[PromptKind, ...] = ABLATION_KINDS
    backend: BackendConfig = Field(default_factory=BackendConfig)
    output_dir: Optional[str] = None
    metric_averaging: Averaging = Averaging.MACRO
    strict: bool = True
    granularity: Granularity = Granularity.POSTING
    # Label unlabeled ledgers with JET verdicts before evaluating
    pseudo_label: bool = True
    method_name: Optional[str] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="before")
    @classmethod
    def _jet_from_generator(cls, data: Any) -> Any:
        """Score a generated ledger with the generator's own JET thresholds."""
        if not isinstance(data, dict) or data.get("gen") is None or data.get("jet") is not None:
            return data
        gen = data["gen"]
        if not isinstance(gen, GenConfig):
            try:
                gen = GenConfig.model_validate(gen)
            except ValidationError:
                return data
        return {**data, "gen": gen, "jet": gen.jet_config()}

    @model_validator(mode="after")
    def _check_paths(self) -> "RunConfig":
        if self.dataset_path is None and self.gen is None:
            raise ValueError("set dataset_path or gen")
        for name in ("dataset_path", "labels_path"):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise ValueError(f"{name} does not exist: {value}")
        replay = self.backend.replay_path
        if self.backend.kind.value == "replay" and replay and not Path(replay).is_file():
            raise ValueError(f"replay fixture does not exist: {replay}")
        if not self.ablation_kinds:
            raise ValueError("ablation_kinds must name at least one variant")
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        """Pin every stochastic component to ``seed``."""
        update: dict[str, object] = {
            "iforest": self.iforest.model_copy(update={"seed": seed}),
        }
        if self.gen is not None:
            update["gen"] = self.gen.model_copy(update={"seed": seed})
        return self.model_copy(update=update)

    def echo(self) -> dict:
        """JSON-ready copy for the run directory."""
        return self.model_dump(mode="json")
