"""Single simulation run - writes metrics.csv, events.jsonl, heatmap.csv and final_models.bin"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

src_dir = Path(__file__).parent.parent
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))

from utils.config.config_utils import apply_overrides, load_config, parse_overrides
from utils.errors import CflhkdError
from utils.log_utils import setup_run_logging, tail_log
from utils.path_utils import default_output_dir
from utils.report.artifact_utils import write_run_artifacts
from utils.sim.drift_utils import drift_scenario
from utils.sim.sim_utils import SimConfig, run


def build_config(
    config_path: Optional[str] = None,
    seed: Optional[int] = None,
    method: Optional[str] = None,
    overrides: Optional[List[str]] = None,
) -> SimConfig:
    """Load a config file and apply --seed, --method and --set overrides in that order."""
    config = load_config(config_path)
    explicit = {}
    if seed is not None:
        explicit["seed"] = seed
    if method is not None:
        explicit["method"] = method
    config = apply_overrides(config, explicit)
    return apply_overrides(config, parse_overrides(overrides))


def execute(config: SimConfig, out_dir: Path, heatmap: bool = True) -> Dict:
    """Run one config and write its artifacts; returns the run summary plus output paths."""
    artifacts = drift_scenario(config) if config.drift else run(config)
    written = write_run_artifacts(artifacts, out_dir, heatmap=heatmap)
    return {
        **artifacts.summary(),
        "out_dir": str(out_dir),
        "outputs": {name: str(path) for name, path in written.items()},
    }


def main(
    config_path: Optional[str] = None,
    seed: Optional[int] = None,
    method: Optional[str] = None,
    out_dir: Optional[str] = None,
    overrides: Optional[List[str]] = None,
):
    """
    Main entrypoint for a single run.

    Args:
        config_path: TOML config (default: $CFLHKD_CONFIG_FILE or configs/default.toml)
        seed: Overrides sim.seed
        method: Overrides sim.method
        out_dir: Output directory (default: artifacts/{timestamp}_{method}_seed{seed})
        overrides: "key=value" strings, e.g. "refine.lambda0=0.5"

    Returns:
        Dictionary with run results
    """
    print("=" * 60)
    print("CFLHKD Simulation Run")
    print("=" * 60)

    try:
        config = build_config(config_path, seed, method, overrides)
    except CflhkdError as e:
        print(f"✗ Invalid config: {e}")
        return {"status": "error", "error": str(e)}

    run_name = f"{config.method}_seed{config.seed}"
    log_file = setup_run_logging(run_name)
    target = Path(out_dir) if out_dir else default_output_dir(run_name)
    print(f"Method: {config.method}  Seed: {config.seed}  Rounds: {config.rounds}  Clients: {config.num_clients}")

    try:
        result = execute(config, target)
    except CflhkdError as e:
        print(f"✗ Run failed: {e}")
        print(f"\n=== Last lines of {log_file} ===")
        print(tail_log(log_file, tail_chars=2000))
        return {"status": "error", "error": str(e), "log_file": str(log_file)}

    print(f"✓ Final mean cluster accuracy: {result['final_mean_cluster_acc']}")
    if result["final_global_acc"] is not None:
        print(f"✓ Final global accuracy: {result['final_global_acc']}")
    if "drift_drop_pp" in result:
        recovery = result["drift_recovery_rounds"]
        print(f"✓ Drift drop: {result['drift_drop_pp']:.2f} pp, recovery: {recovery if recovery is not None else '-'}")
    for name, path in result["outputs"].items():
        print(f"✓ Saved {name}: {path}")
    print(f"  Log file: {log_file}")

    return {"status": "success", "log_file": str(log_file), **result}


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="CFLHKD simulation run")
    parser.add_argument("--config", help="Path to a TOML config file")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--method", help="cflhkd, fedavg, fedprox, hierfavg, staticcfl or standalone")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Config override (repeatable)")

    args = parser.parse_args()

    __return__ = main(
        config_path=args.config,
        seed=args.seed,
        method=args.method,
        out_dir=args.out,
        overrides=args.set,
    )
