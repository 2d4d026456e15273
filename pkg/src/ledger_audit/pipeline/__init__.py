"""Pipeline orchestration for detect and ablate runs."""

from src.ledger_audit.pipeline.detect_pipeline import (
    DetectPipeline,
    PipelineResult,
    PipelineStage,
    StageResult,
    ablate,
    detect,
    new_run_dir,
)

__all__ = [
    "DetectPipeline",
    "PipelineResult",
    "PipelineStage",
    "StageResult",
    "ablate",
    "detect",
    "new_run_dir",
]
