"""Load simulation configs from TOML and apply dotted overrides."""

import logging
import os
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import tomli

from utils.data.data_utils import DataConfig, DriftEvent
from utils.errors import ConfigError
from utils.fdc.fdc_utils import FdcConfig
from utils.fedcore.fedcore_utils import RefineConfig
from utils.model.model_utils import ModelSpec, SgdConfig
from utils.path_utils import config_dir
from utils.sim.sim_utils import AblationConfig, SimConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CONFIG_ENV_VAR = "CFLHKD_CONFIG_FILE"
SECTIONS = {
    "data": DataConfig,
    "model": ModelSpec,
    "sgd": SgdConfig,
    "refine": RefineConfig,
    "fdc": FdcConfig,
    "ablation": AblationConfig,
}
_SIM_KEYS = {f.name for f in fields(SimConfig)} - set(SECTIONS) - {"drift"}
_DRIFT_KEYS = ("round", "kind", "clients", "fraction")


def resolve_config_path(config_path: Optional[Union[str, Path]] = None) -> Path:
    """Explicit path, then $CFLHKD_CONFIG_FILE, then <repo root>/configs/default.toml."""
    if config_path is not None:
        return Path(config_path)
    env_path = os.environ.get(CONFIG_ENV_VAR)
    if env_path:
        return Path(env_path)
    return config_dir() / "default.toml"


def _check_keys(table: Mapping[str, Any], allowed, where: str) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {unknown}")


def _section(default, table: Mapping[str, Any], where: str):
    """default with the table's keys replaced; keys left out keep their defaults."""
    _check_keys(table, [f.name for f in fields(default)], where)
    try:
        return replace(default, **table)
    except TypeError as e:
        raise ConfigError(f"invalid [{where}] table: {e}") from e


def _drift_event(entry: Mapping[str, Any]) -> DriftEvent:
    if "round" not in entry or "kind" not in entry:
        raise ConfigError("every [[drift]] entry needs round and kind")
    if "clients" in entry and "fraction" in entry:
        raise ConfigError("a [[drift]] entry takes clients or fraction, not both")
    parameters = {k: v for k, v in entry.items() if k not in _DRIFT_KEYS}
    if "clients" in entry:
        targets = {"affected_clients": tuple(int(c) for c in entry["clients"])}
    else:
        targets = {"fraction": float(entry.get("fraction", 1.0))}
    return DriftEvent(round=int(entry["round"]), kind=str(entry["kind"]), parameters=parameters, **targets)


def config_from_dict(raw: Mapping[str, Any]) -> SimConfig:
    """
    Build a SimConfig from parsed TOML.

    Tables: [sim], [data], [model], [sgd], [refine], [fdc], [ablation] and
    an array of [[drift]] tables. Missing tables and keys take the SimConfig
    defaults; unknown tables or keys raise ConfigError. Drift entries given
    as a fraction are drawn per run seed when the run starts.
    """
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version} (expected {SCHEMA_VERSION})")
    _check_keys(raw, ["schema_version", "sim", "drift", *SECTIONS], "top level")

    sim_table = dict(raw.get("sim", {}))
    _check_keys(sim_table, _SIM_KEYS, "sim")
    if "method" in sim_table:
        sim_table["method"] = str(sim_table["method"]).lower()

    defaults = SimConfig()
    sections = {name: _section(getattr(defaults, name), raw[name], name) for name in SECTIONS if name in raw}
    drift = tuple(_drift_event(entry) for entry in raw.get("drift", []))
    try:
        return SimConfig(**sim_table, **sections, drift=drift)
    except TypeError as e:
        raise ConfigError(f"invalid [sim] table: {e}") from e


def load_config(config_path: Optional[Union[str, Path]] = None) -> SimConfig:
    path = resolve_config_path(config_path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as f:
        try:
            raw = tomli.load(f)
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    config = config_from_dict(raw)
    logger.info("loaded config %s (method=%s, seed=%d)", path, config.method, config.seed)
    return config


def parse_value(raw: Any) -> Any:
    """TOML-parse a command-line value; bare words stay strings."""
    if not isinstance(raw, str):
        return raw
    try:
        return tomli.loads(f"value = {raw}")["value"]
    except tomli.TOMLDecodeError:
        return raw


def apply_overrides(config: SimConfig, overrides: Mapping[str, Any]) -> SimConfig:
    """
    Return a copy of config with dotted keys replaced.

    "seed" and "sim.seed" address SimConfig fields; "refine.lambda0" addresses
    a nested section. String values are parsed as TOML values.
    """
    for key, raw in overrides.items():
        value = parse_value(raw)
        parts = key.split(".")
        if parts[0] == "sim":
            parts = parts[1:]
        if len(parts) == 1 and parts[0] in _SIM_KEYS:
            if parts[0] == "method":
                value = str(value).lower()
            config = replace(config, **{parts[0]: value})
        elif len(parts) == 2 and parts[0] in SECTIONS:
            section, name = parts
            _check_keys({name: value}, [f.name for f in fields(SECTIONS[section])], section)
            config = replace(config, **{section: replace(getattr(config, section), **{name: value})})
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return config


def parse_overrides(pairs) -> Dict[str, str]:
    """["a.b=1", ...] -> {"a.b": "1"}."""
    overrides = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        overrides[key.strip()] = value.strip()
    return overrides
