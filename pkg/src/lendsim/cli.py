"""Command line driver.

    lendsim simulate --config matic_usdc.toml --seed 7 --out results/sim
    lendsim replay --config multi.toml --date 2020-02-20
    lendsim sweep --config frontier.toml --threshold 0.001
    lendsim gen-population --config matic_usdc.toml --out pop.csv
    lendsim gen-prices --config multi.toml --history-days 30 --start 2020-02-01 --out history.csv

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bundle import write_ensemble, write_sweep
from .config import LoadedConfig, SweepSpec, from_dict, load_config
from .errors import (
    CannotRescaleError,
    ConfigError,
    HistoryFormatError,
    InsufficientDataError,
    InvalidInputError,
    LendsimError,
    MissingAssetError,
)
from .harness import build_grid, prepare_shared, run_ensemble, run_streams, sweep_frontier
from .population import dump_population, generate_population
from .prices import write_history, synthetic_history

log = logging.getLogger("lendsim")

INPUT_ERRORS = (ConfigError, InvalidInputError, MissingAssetError, InsufficientDataError,
                HistoryFormatError, CannotRescaleError, FileNotFoundError)
FULL_SCALE = {"simulate": (1000, 1000), "replay": (1000, 100), "sweep": (1000, 100)}


def _grid_arg(text: str) -> tuple[float, ...]:
    """``a,b,c`` or inclusive ``start:stop:step``."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return tuple(round(start + k * step, 10) for k in range(n))
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lendsim", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="TOML or JSON scenario file (built-in defaults if omitted)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--out", default=out_default)
        p.add_argument("--vol-multiplier", type=float, help="scale every asset to X times its realized vol")
        p.add_argument("--full-scale", action="store_true", help="1000 users; 1000 runs (simulate) or 100 (replay, sweep)")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("simulate", help="run an ensemble"), "results/simulate")
    p = sub.add_parser("replay", help="ensemble over one fixed historical day")
    common(p, "results/replay")
    day = p.add_mutually_exclusive_group(required=True)
    day.add_argument("--date", help="UTC day YYYY-MM-DD")
    day.add_argument("--worst-drawdown", metavar="ASSET", help="worst drawdown day of ASSET")
    p = sub.add_parser("sweep", help="(liqLtv, incentive) frontier sweep")
    common(p, "results/sweep")
    p.add_argument("--threshold", type=float)
    p.add_argument("--liq-ltv-grid", type=_grid_arg)
    p.add_argument("--inc-grid", type=_grid_arg)
    for name, what in (("gen-population", "population CSV"), ("gen-prices", "price grid or history CSV")):
        p = sub.add_parser(name, help=f"write one run's {what}")
        common(p, f"{name.split('-')[1]}.csv")
        p.add_argument("--run-index", type=int, default=0)
        if name == "gen-prices":
            p.add_argument("--history-days", type=int, help="write a multi-day synthetic history instead")
            p.add_argument("--start", default="2020-01-01", help="first UTC day of --history-days output")
    return parser


def _load(args) -> LoadedConfig:
    cfg = load_config(args.config) if args.config else from_dict({})
    scenario = cfg.scenario
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.vol_multiplier is not None:
        changes["vol_multiplier"] = args.vol_multiplier
        changes["vol_targets"] = None
    if args.full_scale:
        users, runs = FULL_SCALE.get(args.command, (1000, 1000))
        changes["n_runs"] = runs
        changes["population"] = dataclasses.replace(scenario.population, n_users=users)
    return LoadedConfig(scenario.replace(**changes) if changes else scenario, cfg.sweep)


def cmd_simulate(args) -> int:
    scenario = _load(args).scenario
    stats = run_ensemble(scenario, threads=args.threads)
    out = write_ensemble(Path(args.out), scenario, stats, "simulate")
    print(f"wrote {out} ({len(stats.runs)} runs, mean undercollateralized fraction "
          f"{stats.final_mean('undercollateralizedFraction'):.6f})")
    return 0


def cmd_replay(args) -> int:
    scenario = _load(args).scenario
    if not scenario.history_path:
        raise ConfigError("replay requires historical data: set historyPath in the config")
    scenario = scenario.replace(price_source="historical-replay", replay_date=args.date,
                                worst_drawdown_asset=args.worst_drawdown)
    shared = prepare_shared(scenario)
    stats = run_ensemble(scenario, threads=args.threads, shared=shared)
    start = dt.datetime.fromtimestamp(shared.grid.start, dt.timezone.utc).isoformat()
    out = write_ensemble(Path(args.out), scenario, stats, "replay", {"windowStart": start})
    print(f"wrote {out} (window starting {start})")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    sweep = SweepSpec(args.liq_ltv_grid or cfg.sweep.liq_ltv_grid, args.inc_grid or cfg.sweep.inc_grid,
                      args.threshold if args.threshold is not None else cfg.sweep.threshold,
                      cfg.sweep.max_ltv_gap)
    if not (0 < sweep.threshold <= 1):
        raise ConfigError("--threshold must lie in (0, 1]")
    result = sweep_frontier(cfg.scenario, sweep.liq_ltv_grid, sweep.inc_grid, sweep.threshold,
                            sweep.max_ltv_gap, threads=args.threads)
    out = write_sweep(Path(args.out), cfg.scenario, sweep, result)
    print(f"wrote {out} ({len(result.surface)} cells, {len(result.frontier)} frontier points)")
    return 0


def cmd_gen_population(args) -> int:
    scenario = _load(args).scenario
    pop_rng, price_rng = run_streams(scenario.master_seed, args.run_index)
    grid = build_grid(scenario, price_rng, prepare_shared(scenario))
    prices = grid.reorder(scenario.symbols).prices
    book = generate_population(scenario.population, scenario.market, prices[:, 0], pop_rng)
    dump_population(book, scenario.symbols, args.out)
    print(f"wrote {args.out} ({book.n_users} users)")
    return 0


def cmd_gen_prices(args) -> int:
    scenario = _load(args).scenario
    _, price_rng = run_streams(scenario.master_seed, args.run_index)
    if args.history_days:
        live = [a for a in scenario.symbols if a not in scenario.pegged]
        corr = scenario.correlation
        vols = dict(scenario.hourly_vols)
        if scenario.vol_multiplier is not None:
            vols = {a: v * scenario.vol_multiplier for a, v in vols.items()}
        prices = synthetic_history(live, vols, price_rng, args.history_days, corr, scenario.initial_prices)
        try:
            start = dt.datetime.fromisoformat(args.start).replace(tzinfo=dt.timezone.utc)
        except ValueError:
            raise InvalidInputError(f"bad --start {args.start!r}") from None
        write_history(args.out, live, prices, int(start.timestamp()))
        print(f"wrote {args.out} ({args.history_days} days of {', '.join(live)})")
        return 0
    grid = build_grid(scenario, price_rng, prepare_shared(scenario))
    grid.to_csv(args.out)
    print(f"wrote {args.out}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "replay": cmd_replay, "sweep": cmd_sweep,
            "gen-population": cmd_gen_population, "gen-prices": cmd_gen_prices}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LendsimError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
