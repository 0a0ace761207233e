"""Run logging: one timestamped log file per run plus console output."""

import logging
import sys
from pathlib import Path
from typing import Optional

from utils.path_utils import logs_dir, run_timestamp

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_run_logging(
    run_name: str,
    log_dir: Optional[Path] = None,
    level: int = logging.INFO,
    console: bool = True,
) -> Path:
    """
    Configure the root logger for a simulator run.

    Args:
        run_name: Short name used in the log file name
        log_dir: Directory for log files (default: project_root/logs)
        level: Logging level for both handlers
        console: Whether to also log to stderr

    Returns:
        Path of the log file
    """
    if log_dir is None:
        log_dir = logs_dir()
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)

    safe_name = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in run_name)
    log_file = log_dir / f"{run_timestamp()}_{safe_name}.log"

    root = logging.getLogger()
    root.setLevel(level)
    for handler in list(root.handlers):
        if getattr(handler, "_cflhkd_handler", False):
            root.removeHandler(handler)
            handler.close()

    formatter = logging.Formatter(LOG_FORMAT)
    file_handler = logging.FileHandler(log_file, mode="w", encoding="utf-8")
    file_handler.setFormatter(formatter)
    file_handler._cflhkd_handler = True
    root.addHandler(file_handler)

    if console:
        stream_handler = logging.StreamHandler(sys.stderr)
        stream_handler.setFormatter(formatter)
        stream_handler._cflhkd_handler = True
        root.addHandler(stream_handler)

    return log_file


def tail_log(log_file: Path, tail_chars: int = 4000) -> str:
    """Return the last tail_chars characters of a log file ("" if missing)."""
    try:
        text = Path(log_file).read_text(encoding="utf-8")
    except FileNotFoundError:
        return ""
    return text[-tail_chars:] if tail_chars > 0 else text
