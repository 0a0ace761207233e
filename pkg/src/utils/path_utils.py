"""Locations of the simulator's configs, logs and run artifacts."""

from datetime import datetime
from functools import lru_cache
from pathlib import Path
from typing import Optional

ROOT_MARKERS = ("pixi.toml", "requirements.txt", "README.md")


@lru_cache(maxsize=None)
def get_repo_root(start: Optional[Path] = None) -> Path:
    """First directory at or above start (default: this package) holding a ROOT_MARKERS file."""
    here = Path(start).resolve() if start is not None else Path(__file__).resolve().parent
    for candidate in (here, *here.parents):
        if any((candidate / marker).is_file() for marker in ROOT_MARKERS):
            return candidate
    return here


def config_dir() -> Path:
    return get_repo_root() / "configs"


def logs_dir() -> Path:
    return get_repo_root() / "logs"


def run_timestamp() -> str:
    return datetime.now().strftime("%Y%m%d_%H%M%S")


def default_output_dir(run_name: str, base_dir: Optional[Path] = None) -> Path:
    """artifacts/{timestamp}_{run_name} under the repo root (not created)."""
    base = Path(base_dir) if base_dir is not None else get_repo_root() / "artifacts"
    return base / f"{run_timestamp()}_{run_name}"
