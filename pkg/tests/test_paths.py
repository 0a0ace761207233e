import logging

from utils.log_utils import setup_run_logging, tail_log
from utils.path_utils import config_dir, default_output_dir, get_repo_root


def test_repo_root_holds_configs():
    assert (get_repo_root() / "pixi.toml").is_file()
    assert (config_dir() / "default.toml").is_file()


def test_repo_root_from_nested_start(tmp_path):
    nested = tmp_path / "a" / "b"
    nested.mkdir(parents=True)
    (tmp_path / "pixi.toml").write_text("")
    assert get_repo_root(nested) == tmp_path.resolve()


def test_default_output_dir(tmp_path):
    out = default_output_dir("cflhkd_seed0", base_dir=tmp_path)
    assert out.parent == tmp_path
    assert out.name.endswith("_cflhkd_seed0")
    assert not out.exists()


def test_run_log_file_and_tail(tmp_path):
    log_file = setup_run_logging("fed/avg seed", log_dir=tmp_path, console=False)
    assert log_file.parent == tmp_path
    assert log_file.name.endswith("_fed_avg_seed.log")
    logging.getLogger("utils.sim").info("round 1 done")
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert tail_log(log_file).rstrip().endswith("round 1 done")
    assert tail_log(log_file, tail_chars=4) == "one\n"
    assert tail_log(tmp_path / "missing.log") == ""
