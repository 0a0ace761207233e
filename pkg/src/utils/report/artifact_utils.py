"""Utilities for writing run artifacts to a local output directory"""

import json
from pathlib import Path
from typing import Dict, Iterable, Optional

import pandas as pd

from utils.model.model_utils import save_models
from utils.report.report_utils import metrics_frame, similarity_heatmap

# 17 significant digits round-trip any float64
CSV_FLOAT_FORMAT = "%.17g"


def save_dataframe_csv(
    df: pd.DataFrame,
    out_dir: Path,
    filename: str,
    index: bool = False,
) -> Path:
    """
    Save a pandas DataFrame as CSV with full float64 precision.

    Args:
        df: pandas DataFrame
        out_dir: Output directory (created if missing)
        filename: Name of the file (e.g., "metrics.csv")
        index: Whether to write the index column

    Returns:
        Path of the written file
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / filename
    df.to_csv(path, index=index, float_format=CSV_FLOAT_FORMAT, na_rep="", lineterminator="\n")
    return path


def save_jsonl(records: Iterable[dict], out_dir: Path, filename: str) -> Path:
    """One JSON object per line, keys sorted."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / filename
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def save_json(payload: dict, out_dir: Path, filename: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / filename
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_run_artifacts(artifacts, out_dir: Path, heatmap: bool = True) -> Dict[str, Path]:
    """
    Write everything a finished run produces.

    Args:
        artifacts: RunArtifacts from the simulator
        out_dir: Output directory
        heatmap: Whether to export the client similarity matrix

    Returns:
        Dictionary mapping artifact name -> local Path:
        metrics, events, models, summary, plus heatmap and drift when present
    """
    out_dir = Path(out_dir)
    written = {
        "metrics": save_dataframe_csv(metrics_frame(artifacts.metrics), out_dir, "metrics.csv"),
        "events": save_jsonl(artifacts.events, out_dir, "events.jsonl"),
        "models": save_models(out_dir / "final_models.bin", artifacts.final_models()),
        "summary": save_json(artifacts.summary(), out_dir, "summary.json"),
    }
    if heatmap and artifacts.clients:
        matrix = similarity_heatmap(list(artifacts.clients.values()))
        written["heatmap"] = save_dataframe_csv(matrix, out_dir, "heatmap.csv", index=True)
    if artifacts.drift is not None:
        written["drift"] = save_json(artifacts.drift.to_json(), out_dir, "drift.json")
    return written


def write_summary_table(rows: Iterable[dict], out_dir: Path, filename: str = "summary.csv") -> Path:
    """Flat table of run summaries (one row per run) for compare and sweep jobs."""
    return save_dataframe_csv(pd.DataFrame(list(rows)), out_dir, filename)


def read_metrics(path: Path) -> Optional[pd.DataFrame]:
    """Load a metrics.csv written by write_run_artifacts (None when missing)."""
    path = Path(path)
    if not path.exists():
        return None
    return pd.read_csv(path)
