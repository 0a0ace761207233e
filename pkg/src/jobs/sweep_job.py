"""Parameter sweep - one run per (value, seed), runs in separate processes, writes summary.csv"""

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

src_dir = Path(__file__).parent.parent
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))

from jobs.run_job import build_config, execute
from utils.config.config_utils import apply_overrides, parse_value
from utils.log_utils import setup_run_logging
from utils.path_utils import default_output_dir
from utils.report.artifact_utils import write_summary_table


def _run_one(config, out_dir: Path, param: str, value) -> dict:
    result = execute(config, out_dir, heatmap=False)
    result.pop("outputs", None)
    return {"param": param, "value": value, **result}


def main(
    param: str,
    values: List[str],
    config_path: Optional[str] = None,
    seeds: Optional[List[int]] = None,
    method: Optional[str] = None,
    out_dir: Optional[str] = None,
    jobs: int = 1,
):
    """
    Sweep one config key over a list of values (and optionally seeds).

    Args:
        param: Dotted config key, e.g. "refine.lambda0" or "fdc.gamma"
        values: Values for the key, parsed as TOML values
        config_path: Base TOML config
        seeds: Seeds to repeat every value with (default: the config's seed)
        method: Overrides sim.method
        out_dir: Output directory; every run gets a subdirectory
        jobs: Number of worker processes

    Returns:
        Dictionary with the summary table path and per-run rows
    """
    print("=" * 60)
    print(f"CFLHKD Sweep: {param}")
    print("=" * 60)

    base = build_config(config_path, method=method)
    seeds = seeds or [base.seed]
    target = Path(out_dir) if out_dir else default_output_dir(f"sweep_{param.replace('.', '_')}")
    log_file = setup_run_logging(f"sweep_{param}")

    tasks = []
    for raw in values:
        value = parse_value(raw)
        for seed in seeds:
            config = apply_overrides(base, {param: value, "seed": seed})
            tasks.append((config, target / f"{param}={raw}" / f"seed{seed}", param, value))
    print(f"Runs: {len(tasks)} ({len(values)} values x {len(seeds)} seeds), jobs: {jobs}")

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, *zip(*tasks)))
    else:
        rows = [_run_one(*task) for task in tasks]

    for row in rows:
        print(f"✓ {param}={row['value']} seed={row['seed']}: mean cluster acc {row['final_mean_cluster_acc']}")
    summary_path = write_summary_table(rows, target)
    print(f"✓ Saved summary: {summary_path}")

    return {"status": "success", "summary_csv": str(summary_path), "log_file": str(log_file), "runs": rows}


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="CFLHKD parameter sweep")
    parser.add_argument("--config", help="Path to a TOML config file")
    parser.add_argument("--param", required=True, help="Dotted config key (e.g. refine.lambda0)")
    parser.add_argument("--values", required=True, help="Comma-separated values (e.g. 0,0.1,0.5)")
    parser.add_argument("--seeds", help="Comma-separated seeds (e.g. 0,1,2,3,4)")
    parser.add_argument("--method", help="Overrides sim.method")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--jobs", type=int, default=1, help="Worker processes")

    args = parser.parse_args()

    __return__ = main(
        param=args.param,
        values=[v.strip() for v in args.values.split(",") if v.strip()],
        config_path=args.config,
        seeds=[int(s) for s in args.seeds.split(",")] if args.seeds else None,
        method=args.method,
        out_dir=args.out,
        jobs=args.jobs,
    )
