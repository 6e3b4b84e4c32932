"""Replay the worst drawdown day of a synthetic MATIC history with a planted crash.

Writes a multi-day history (or uses --history), finds the day with the deepest
close-to-peak drop, and runs the long-only MATIC/USDC book over it. Prints the
minutes with the most liquidation events next to the price path.
"""

from __future__ import annotations

import argparse
import datetime as dt
import os
from pathlib import Path

import numpy as np

from lendsim.bundle import write_ensemble
from lendsim.config import load_config
from lendsim.harness import prepare_shared, run_ensemble
from lendsim.prices import MINUTES_PER_DAY, synthetic_history, write_history

ROOT = Path(__file__).resolve().parents[1]


def planted_history(path: Path, days: int, crash_day: int, drop: float, seed: int) -> None:
    prices = synthetic_history(["MATIC"], {"MATIC": 0.012}, np.random.default_rng(seed), days)
    shape = np.ones(prices.shape[1])
    lo, hi = crash_day * MINUTES_PER_DAY, (crash_day + 1) * MINUTES_PER_DAY
    # most of the drop lands in the first hours of the day
    shape[lo:hi] = 1 - drop * (1 - np.exp(-np.arange(MINUTES_PER_DAY) / 180.0)) / (1 - np.exp(-MINUTES_PER_DAY / 180.0))
    shape[hi:] = 1 - drop
    start = int(dt.datetime(2021, 5, 1, tzinfo=dt.timezone.utc).timestamp())
    write_history(path, ["MATIC"], prices * shape, start)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--history", help="existing timestamp,asset,price CSV with MATIC")
    ap.add_argument("--drop", type=float, default=0.14)
    ap.add_argument("--runs", type=int, default=50)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="results/crash_replay")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history = Path(args.history) if args.history else out / "history.csv"
    if not args.history:
        planted_history(history, days=7, crash_day=4, drop=args.drop, seed=1)

    scenario = load_config(ROOT / "configs" / "matic_usdc.toml").scenario.replace(
        n_runs=args.runs, price_source="historical-replay", history_path=str(history),
        worst_drawdown_asset="MATIC")
    shared = prepare_shared(scenario)
    stats = run_ensemble(scenario, args.threads, shared)
    start = dt.datetime.fromtimestamp(shared.grid.start, dt.timezone.utc)
    write_ensemble(out, scenario, stats, "crash-replay", {"windowStart": start.isoformat()})

    price = shared.grid.series("MATIC")
    events = stats.series["liquidationEventCount"].mean
    print(f"window starts {start:%Y-%m-%d %H:%M} UTC; close/peak {price[-1] / price.max():.3f}")
    print(f"mean events per run {events.sum():.1f}; undercollateralized {stats.final_mean('undercollateralizedFraction'):.5f}")
    print("busiest minutes (minute, mean events, MATIC price):")
    for m in np.argsort(events)[::-1][:10]:
        print(f"  {m:5d} {events[m]:7.2f} {price[m]:8.4f}")


if __name__ == "__main__":
    main()
