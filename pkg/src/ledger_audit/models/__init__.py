"""Data models for the ledger audit toolkit."""

from src.ledger_audit.models.evaluation import (
    Averaging,
    ComparisonRow,
    ComparisonTable,
    ConfusionCounts,
    EvalReport,
    MetricSet,
)
from src.ledger_audit.models.iforest import (
    DEFAULT_FEATURES,
    Decision,
    FeatureName,
    IForestConfig,
    IForestResult,
)
from src.ledger_audit.models.jet import (
    TRIGGER_THRESHOLD,
    JetConfig,
    JetFlags,
    count_triggered,
)
from src.ledger_audit.models.ledger import (
    CDFlag,
    DataFormat,
    Dataset,
    JournalEntry,
    LabelProvenance,
    PostingGroup,
    cents_to_decimal,
    group_by_posting,
)
from src.ledger_audit.models.prompt import (
    KIND_LABELS,
    TEMPLATE_VERSION,
    Dialect,
    PromptBundle,
    PromptKind,
    PromptVariant,
)
from src.ledger_audit.models.run import ABLATION_KINDS, Granularity, RunConfig
from src.ledger_audit.models.stats import DatasetStats
from src.ledger_audit.models.synth import (
    Archetype,
    DatasetSummary,
    GenConfig,
    LabeledDataset,
)
from src.ledger_audit.models.verdict import (
    BackendConfig,
    BackendKind,
    ModelVerdict,
    ParsedVerdict,
    ParseStatus,
)

__all__ = [
    "ABLATION_KINDS",
    "Archetype",
    "Averaging",
    "BackendConfig",
    "BackendKind",
    "CDFlag",
    "ComparisonRow",
    "ComparisonTable",
    "ConfusionCounts",
    "DEFAULT_FEATURES",
    "DataFormat",
    "Dataset",
    "DatasetStats",
    "DatasetSummary",
    "Decision",
    "Dialect",
    "EvalReport",
    "FeatureName",
    "GenConfig",
    "Granularity",
    "IForestConfig",
    "IForestResult",
    "JetConfig",
    "JetFlags",
    "JournalEntry",
    "KIND_LABELS",
    "LabelProvenance",
    "LabeledDataset",
    "MetricSet",
    "ModelVerdict",
    "ParseStatus",
    "ParsedVerdict",
    "PostingGroup",
    "PromptBundle",
    "PromptKind",
    "PromptVariant",
    "RunConfig",
    "TEMPLATE_VERSION",
    "TRIGGER_THRESHOLD",
    "cents_to_decimal",
    "count_triggered",
    "group_by_posting",
]
