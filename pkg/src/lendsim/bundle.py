"""Result bundles: plot-ready CSV series plus a JSON summary with the config echo.

CSV bodies depend only on the config and seed; floats are written with
``repr`` so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import SweepSpec, config_to_dict
from .harness import SERIES, EnsembleStats, ScenarioConfig, SweepResult, aggregate_final_distribution

SERIES_HEADER = ["minute", "mean", "q025", "q975"]
SURFACE_HEADER = ["liqLtv", "inc", "fraction", "finalMeanLtv", "meanSlippage", "theoryInc", "theoryIncWithFees"]
FRONTIER_HEADER = ["liqLtv", "inc", "fraction", "finalMeanLtv", "theoryInc"]


def _f(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_ensemble(out: Path, scenario: ScenarioConfig, stats: EnsembleStats, command: str,
                   extra: dict | None = None) -> Path:
    out = Path(out)
    (out / "series").mkdir(parents=True, exist_ok=True)
    for name in SERIES:
        band = stats.series[name]
        _write_csv(out / "series" / f"{name}.csv", SERIES_HEADER,
                   ([m, _f(band.mean[m]), _f(band.lower[m]), _f(band.upper[m])] for m in range(len(band.mean))))
    keys = list(stats.finals)
    _write_csv(out / "runs.csv", ["run"] + keys,
               ([r.run_index] + [_f(r.final[k]) for k in keys] for r in stats.runs))
    for label, initial in (("initial", True), ("final", False)):
        rows = []
        for r in stats.runs:
            pts = r.initial_scatter if initial else r.final_scatter
            rows.extend([r.run_index, u, _f(ltv), _f(size)] for u, (ltv, size) in enumerate(pts))
        _write_csv(out / f"{label}_distribution.csv", ["run", "userId", "ltv", "portfolio"], rows)
    echo = config_to_dict(scenario)
    _write_json(out / "config.json", echo)
    finals = {k: {"mean": float(np.mean(v)), "q025": float(np.quantile(v, 0.025)),
                  "q975": float(np.quantile(v, 0.975))} for k, v in stats.finals.items()}
    pooled = aggregate_final_distribution(stats.runs)
    summary = {
        "command": command,
        "version": __version__,
        "seed": scenario.master_seed,
        "nRuns": scenario.n_runs,
        "nUsers": scenario.n_users,
        "completedRuns": len(stats.runs),
        "failures": [{"run": f.run_index, "message": f.message} for f in stats.failures],
        "finals": finals,
        "pooledUndercollateralizedFraction": float(np.mean(pooled[:, 0] >= 1)) if len(pooled) else 0.0,
        "config": echo,
    }
    if extra:
        summary.update(extra)
    _write_json(out / "summary.json", summary)
    return out


def write_sweep(out: Path, scenario: ScenarioConfig, sweep: SweepSpec, result: SweepResult) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "surface.csv", SURFACE_HEADER,
               ([_f(c.liq_ltv), _f(c.incentive), _f(c.undercollateralized_fraction), _f(c.final_mean_ltv),
                 _f(c.mean_slippage), _f(c.theory_incentive), _f(c.theory_incentive_with_fees)]
                for c in result.surface))
    _write_csv(out / "frontier.csv", FRONTIER_HEADER,
               ([_f(c.liq_ltv), _f(c.incentive), _f(c.undercollateralized_fraction), _f(c.final_mean_ltv),
                 _f(c.theory_incentive)] for c in result.frontier))
    echo = config_to_dict(scenario, sweep)
    _write_json(out / "config.json", echo)
    _write_json(out / "summary.json", {
        "command": "sweep",
        "version": __version__,
        "seed": scenario.master_seed,
        "threshold": result.threshold,
        "cells": len(result.surface),
        "frontierCells": len(result.frontier),
        "config": echo,
    })
    return out
