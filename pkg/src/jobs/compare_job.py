"""Method comparison - runs several configs or methods over the same seeds, writes summary.csv"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

src_dir = Path(__file__).parent.parent
if str(src_dir) not in sys.path:
    sys.path.insert(0, str(src_dir))

import pandas as pd

from jobs.run_job import build_config, execute
from utils.config.config_utils import apply_overrides
from utils.log_utils import setup_run_logging
from utils.path_utils import default_output_dir
from utils.report.artifact_utils import save_dataframe_csv, write_summary_table


def main(
    configs: Optional[List[str]] = None,
    methods: Optional[List[str]] = None,
    seeds: Optional[List[int]] = None,
    out_dir: Optional[str] = None,
    overrides: Optional[List[str]] = None,
):
    """
    Compare methods on matched seeds.

    Args:
        configs: TOML configs to compare (one entry each)
        methods: Methods to run on the default (or first) config
        seeds: Seeds shared by every entry (default: each config's seed)
        out_dir: Output directory
        overrides: "key=value" strings applied to every entry

    Returns:
        Dictionary with summary paths and per-run rows
    """
    print("=" * 60)
    print("CFLHKD Method Comparison")
    print("=" * 60)

    if not configs and not methods:
        print("✗ Nothing to compare: pass --configs or --methods")
        return {"status": "error", "error": "no configs or methods"}

    entries = []
    if configs:
        for path in configs:
            entries.append((Path(path).stem, build_config(path, overrides=overrides)))
    if methods:
        base_path = configs[0] if configs else None
        for method in methods:
            entries.append((method, build_config(base_path, method=method, overrides=overrides)))

    target = Path(out_dir) if out_dir else default_output_dir("compare")
    log_file = setup_run_logging("compare")

    rows = []
    for label, base in entries:
        for seed in seeds or [base.seed]:
            config = apply_overrides(base, {"seed": seed})
            result = execute(config, target / label / f"seed{seed}", heatmap=False)
            result.pop("outputs", None)
            rows.append({"entry": label, **result})
            print(f"✓ {label} seed={seed}: mean cluster acc {result['final_mean_cluster_acc']}")

    summary_path = write_summary_table(rows, target)
    numeric = pd.DataFrame(rows).drop(columns=["seed"]).groupby("entry").mean(numeric_only=True)
    means_path = save_dataframe_csv(numeric, target, "summary_means.csv", index=True)
    print(f"✓ Saved summary: {summary_path}")
    print(f"✓ Saved per-entry means: {means_path}")

    return {
        "status": "success",
        "summary_csv": str(summary_path),
        "summary_means_csv": str(means_path),
        "log_file": str(log_file),
        "runs": rows,
    }


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="CFLHKD method comparison")
    parser.add_argument("--configs", nargs="+", help="TOML configs to compare")
    parser.add_argument("--methods", nargs="+", help="Methods to compare on one config")
    parser.add_argument("--seeds", help="Comma-separated seeds (e.g. 0,1,2,3,4)")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Config override (repeatable)")

    args = parser.parse_args()

    __return__ = main(
        configs=args.configs,
        methods=args.methods,
        seeds=[int(s) for s in args.seeds.split(",")] if args.seeds else None,
        out_dir=args.out,
        overrides=args.set,
    )
