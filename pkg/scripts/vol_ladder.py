"""Volatility stress ladder: the same seeded populations and paths at 1x, 2x, 5x and 10x realized vol."""

from __future__ import annotations

import argparse
import os
from pathlib import Path

from lendsim.bundle import write_ensemble
from lendsim.config import load_config
from lendsim.harness import vol_ladder

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "matic_usdc.toml")
    ap.add_argument("--levels", default="1,2,5,10")
    ap.add_argument("--runs", type=int, default=30)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="results/vol_ladder")
    args = ap.parse_args()

    scenario = load_config(args.config).scenario.replace(n_runs=args.runs)
    levels = [float(x) for x in args.levels.split(",")]
    ladder = vol_ladder(scenario, levels, args.threads)
    print(f"{'mult':>5} {'liquidated':>12} {'debt %':>8} {'events':>8} {'undercoll':>10} {'profit':>10} {'slip fees':>10}")
    for m, stats in ladder.items():
        write_ensemble(Path(args.out) / f"x{m:g}", scenario.replace(vol_multiplier=m), stats, "vol-ladder")
        f = stats.final_mean
        print(f"{m:5g} {f('totalLiquidatedFunds'):12.0f} {f('outstandingDebtPct'):8.2f} "
              f"{f('liquidationEvents'):8.1f} {f('undercollateralizedFraction'):10.5f} "
              f"{f('liquidatorProfit'):10.0f} {f('slippageFees'):10.2f}")


if __name__ == "__main__":
    main()
