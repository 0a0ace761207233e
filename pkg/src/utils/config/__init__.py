"""Config loading."""

from utils.config.config_utils import load_config, apply_overrides, parse_overrides

__all__ = [
    "load_config",
    "apply_overrides",
    "parse_overrides",
]
