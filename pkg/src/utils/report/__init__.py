"""Metrics, objectives, diagnostics and artifact export."""

from utils.report.report_utils import (
    RoundMetrics,
    eval_accuracy,
    objectives,
    divergence_diagnostics,
    similarity_heatmap,
    similarity_block_stats,
    drift_metrics,
    rounds_to_target,
)
from utils.report.artifact_utils import write_run_artifacts, write_summary_table

__all__ = [
    "RoundMetrics",
    "eval_accuracy",
    "objectives",
    "divergence_diagnostics",
    "similarity_heatmap",
    "similarity_block_stats",
    "drift_metrics",
    "rounds_to_target",
    "write_run_artifacts",
    "write_summary_table",
]
