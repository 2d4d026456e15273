"""Detection core: ledger I/O, rules, isolation forest, statistics, prompts and metrics."""

from src.ledger_audit.core.context_stats import (
    compute_stats,
    context_block,
    percentile_of,
    quantile,
    rank_postings,
    stats_report,
)
from src.ledger_audit.core.iforest import (
    IsolationForest,
    average_path_normalizer,
    decide,
    feature_matrix,
    fit_score,
    score_rows,
)
from src.ledger_audit.core.jet_rules import compute_flags, flag_rows, flag_table, pseudo_label
from src.ledger_audit.core.ledger_io import (
    attach_labels,
    load_dataset,
    load_labels,
    write_dataset,
    write_labels,
    write_report,
)
from src.ledger_audit.core.metrics import (
    compare,
    confusion,
    evaluate_predictions,
    metrics,
    render_table,
)
from src.ledger_audit.core.prompt_forge import build_prompt, build_prompts, format_bundle
from src.ledger_audit.core.synthgen import SyntheticLedgerGenerator, describe, generate
from src.ledger_audit.core.verdict_parser import END_OF_ANALYSIS, parse_verdict

__all__ = [
    "END_OF_ANALYSIS",
    "IsolationForest",
    "SyntheticLedgerGenerator",
    "attach_labels",
    "average_path_normalizer",
    "build_prompt",
    "build_prompts",
    "compare",
    "compute_flags",
    "compute_stats",
    "confusion",
    "context_block",
    "decide",
    "describe",
    "evaluate_predictions",
    "feature_matrix",
    "fit_score",
    "flag_rows",
    "flag_table",
    "format_bundle",
    "generate",
    "load_dataset",
    "load_labels",
    "metrics",
    "parse_verdict",
    "percentile_of",
    "pseudo_label",
    "quantile",
    "rank_postings",
    "render_table",
    "score_rows",
    "stats_report",
    "write_dataset",
    "write_labels",
    "write_report",
]
