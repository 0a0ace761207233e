import pytest

from utils.config.config_utils import (
    CONFIG_ENV_VAR,
    apply_overrides,
    config_from_dict,
    load_config,
    parse_overrides,
    parse_value,
    resolve_config_path,
)
from utils.errors import ConfigError
from utils.path_utils import config_dir
from utils.sim.sim_utils import SimConfig

CONFIG_DIR = config_dir()


def test_default_config_matches_dataclass_defaults():
    assert load_config(CONFIG_DIR / "default.toml") == SimConfig()


def test_drift_config():
    config = load_config(CONFIG_DIR / "drift_subset_switch.toml")
    assert config.data.label_subset == (0, 1, 2, 3, 4)
    (event,) = config.drift
    assert event.round == 50
    assert event.kind == "label-subset-switch"
    assert event.fraction == 0.5
    assert event.affected_clients == ()
    assert event.parameters == {"source": [0, 1, 2, 3, 4], "target": [5, 6, 7, 8, 9]}
    first, second = event.resolve(config.num_clients, 0), event.resolve(config.num_clients, 1)
    assert len(first.affected_clients) == len(second.affected_clients) == 50
    assert first.affected_clients != second.affected_clients


def test_missing_tables_keep_defaults():
    assert config_from_dict({}) == SimConfig()
    assert config_from_dict({"sim": {"seed": 4}}) == SimConfig(seed=4)


def test_partial_table_keeps_other_defaults():
    defaults = SimConfig()
    config = config_from_dict({"refine": {"lambda0": 0.4}, "data": {"num_clients": 12, "num_clusters": 3}})
    assert config.refine.lambda0 == 0.4
    assert config.refine.refine_steps == defaults.refine.refine_steps
    assert config.refine.mode == defaults.refine.mode
    assert config.data.num_clients == 12
    assert config.data.label_conflict == defaults.data.label_conflict
    assert config.fdc == defaults.fdc


def test_drift_entry_takes_clients_or_fraction():
    raw = {"drift": [{"round": 3, "kind": "feature-shift", "clients": [1], "fraction": 0.5, "shift": 1.0}]}
    with pytest.raises(ConfigError):
        config_from_dict(raw)
    (event,) = config_from_dict({"drift": [{"round": 3, "kind": "feature-shift", "shift": 1.0}]}).drift
    assert event.fraction == 1.0


def test_env_var_selects_config(tmp_path, monkeypatch):
    path = tmp_path / "run.toml"
    path.write_text('[sim]\nseed = 11\nmethod = "FedAvg"\n')
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
    assert resolve_config_path() == path
    config = load_config()
    assert config.seed == 11
    assert config.method == "fedavg"


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_malformed_toml(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[sim\nseed = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize(
    "raw",
    [
        {"sim": {"seeds": 1}},
        {"network": {}},
        {"fdc": {"gama": 0.5}},
        {"schema_version": 2},
        {"drift": [{"kind": "feature-shift"}]},
    ],
)
def test_rejected_configs(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_drift_entry_with_explicit_clients():
    raw = {
        "data": {"num_clients": 10, "num_clusters": 2},
        "drift": [{"round": 3, "kind": "feature-shift", "clients": [4, 2], "shift": 1.5}],
    }
    (event,) = config_from_dict(raw).drift
    assert event.affected_clients == (4, 2)
    assert event.parameters == {"shift": 1.5}


def test_apply_overrides():
    config = apply_overrides(
        SimConfig(),
        {
            "seed": "7",
            "sim.method": "HierFAVG",
            "refine.lambda0": "0.5",
            "ablation.bilevel_aggregation": "false",
            "data.samples_per_client": "[10, 20]",
            "ablation.dynamic_weights": "false",
        },
    )
    assert config.seed == 7
    assert config.method == "hierfavg"
    assert config.refine.lambda0 == 0.5
    assert config.data.samples_per_client == (10, 20)
    assert config.ablation.dynamic_weights is False
    assert config.ablation.bilevel_aggregation is False


def test_override_validation_still_applies():
    with pytest.raises(ConfigError):
        apply_overrides(SimConfig(), {"fdc.gamma": "1.5"})
    with pytest.raises(ConfigError):
        apply_overrides(SimConfig(), {"fdc.gama": "0.5"})
    with pytest.raises(ConfigError):
        apply_overrides(SimConfig(), {"a.b.c": "1"})


def test_parse_value():
    assert parse_value("0.1") == 0.1
    assert parse_value("3") == 3
    assert parse_value("true") is True
    assert parse_value("[1, 2]") == [1, 2]
    assert parse_value("cflhkd") == "cflhkd"
    assert parse_value(5) == 5


def test_parse_overrides():
    assert parse_overrides(["seed=1", " fdc.delta = 0.9 "]) == {"seed": "1", "fdc.delta": "0.9"}
    assert parse_overrides(None) == {}
    with pytest.raises(ConfigError):
        parse_overrides(["seed"])
