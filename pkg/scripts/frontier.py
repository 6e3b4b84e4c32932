"""(liqLtv, incentive) sweep on the high-vol MATIC/USDC pair; prints the detected boundary next to 1 - liqLtv."""

from __future__ import annotations

import argparse
import os
import time
from pathlib import Path

from lendsim.bundle import write_sweep
from lendsim.config import SweepSpec, load_config
from lendsim.harness import sweep_frontier

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "frontier.toml")
    ap.add_argument("--threshold", type=float, default=0.01)
    ap.add_argument("--runs", type=int, help="override runs per cell")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="results/frontier")
    args = ap.parse_args()

    cfg = load_config(args.config)
    scenario = cfg.scenario if args.runs is None else cfg.scenario.replace(n_runs=args.runs)
    sw = cfg.sweep
    t0 = time.perf_counter()
    res = sweep_frontier(scenario, sw.liq_ltv_grid, sw.inc_grid, args.threshold, sw.max_ltv_gap, args.threads)
    write_sweep(Path(args.out), scenario, SweepSpec(sw.liq_ltv_grid, sw.inc_grid, args.threshold, sw.max_ltv_gap), res)

    print(f"{len(res.surface)} cells x {scenario.n_runs} runs in {time.perf_counter() - t0:.0f}s")
    print(f"{'liqLtv':>7} {'inc*':>6} {'1-liq':>7} {'1-liq-slip-fee':>15} {'fraction':>9}")
    found = {c.liq_ltv: c for c in res.frontier}
    for liq in sw.liq_ltv_grid:
        c = found.get(liq)
        if c is None:
            print(f"{liq:7.2f} {'-':>6} {1 - liq:7.3f} {'-':>15} {'-':>9}")
        else:
            print(f"{liq:7.2f} {c.incentive:6.2f} {c.theory_incentive:7.3f} "
                  f"{c.theory_incentive_with_fees:15.4f} {c.undercollateralized_fraction:9.4f}")


if __name__ == "__main__":
    main()
