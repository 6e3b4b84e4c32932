"""Single runs, ensembles, volatility ladders and (liqLtv, incentive) sweeps.

Run ``k`` of a scenario draws its population and price grid from streams
seeded by ``SeedSequence([master_seed, k])`` only, so results never depend
on worker count or scheduling order. Ensembles fan runs out over a process
pool and reduce them in run-index order.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import AssetParams, Market, PairLiquidity
from .errors import ConfigError, EnsembleError, InvalidInputError, LendsimError
from .execution import DEFAULT_TRADING_FEE
from .liquidation import PathResult, simulate_path
from .population import PopulationConfig, generate_population
from .prices import (
    History,
    PriceGrid,
    load_history,
    rescale_to_vol,
    sample_window,
    scale_vol,
    synthetic_grid,
    window_for_date,
    worst_drawdown_window,
)

log = logging.getLogger(__name__)

PRICE_SOURCES = ("synthetic", "sampled", "historical-replay")
SERIES = (
    "meanLtv",
    "totalLiquidatedFunds",
    "outstandingDebtPct",
    "liquidationEventCount",
    "liquidatorProfitCum",
    "slippageFeesCum",
    "tradingFeesCum",
    "undercollateralizedFraction",
)
FRACTIONAL_SERIES = ("meanLtv", "outstandingDebtPct", "undercollateralizedFraction")
MAX_FAILURE_RATE = 0.01


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    market: Market
    population: PopulationConfig = PopulationConfig()
    price_source: str = "synthetic"
    hourly_vols: Mapping[str, float] = field(default_factory=dict)
    initial_prices: Mapping[str, float] = field(default_factory=dict)
    correlation: tuple | None = None
    vol_multiplier: float | None = None
    vol_targets: Mapping[str, float] | None = None
    n_runs: int = 50
    master_seed: int = 0
    trading_fee: float = DEFAULT_TRADING_FEE
    history_path: str | None = None
    replay_date: str | None = None
    worst_drawdown_asset: str | None = None
    ltv_threshold_denominator: str = "collateral"
    repeat_within_tick: bool = False
    liquidity_depletion: bool = False

    def __post_init__(self):
        if self.n_runs < 1:
            raise InvalidInputError("nRuns must be >= 1")
        if self.price_source not in PRICE_SOURCES:
            raise InvalidInputError(f"priceSource must be one of {PRICE_SOURCES}")
        if self.liquidity_depletion:
            raise InvalidInputError("liquidityDepletion is reserved; only constant volumes are modelled")
        if self.ltv_threshold_denominator not in ("collateral", "netPortfolio"):
            raise InvalidInputError("ltvThresholdDenominator must be collateral or netPortfolio")
        if not (0 <= self.trading_fee < 1):
            raise InvalidInputError("tradingFee must lie in [0, 1)")
        symbols = set(self.market.symbols)
        pop = self.population
        for name in (pop.collateral_assets or ()) + (pop.loan_assets or ()):
            if name not in symbols:
                raise InvalidInputError(f"population references unknown asset {name!r}")
        for name in list(self.vol_targets or {}) + list(self.hourly_vols):
            if name not in symbols:
                raise InvalidInputError(f"volatility given for unknown asset {name!r}")

    @property
    def n_users(self) -> int:
        return self.population.n_users

    @property
    def symbols(self) -> tuple[str, ...]:
        return self.market.symbols

    @property
    def pegged(self) -> frozenset[str]:
        return frozenset(a.symbol for a in self.market.assets if a.is_numeraire_pegged)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class SharedData:
    """Inputs loaded once per ensemble and shared with every worker."""

    history: History | None = None
    grid: PriceGrid | None = None


def prepare_shared(scenario: ScenarioConfig) -> SharedData:
    if scenario.price_source == "synthetic":
        return SharedData()
    if not scenario.history_path:
        raise ConfigError(f"priceSource={scenario.price_source} needs historyPath")
    live = [a for a in scenario.symbols if a not in scenario.pegged]
    history = load_history(scenario.history_path, live)
    if scenario.price_source == "sampled":
        return SharedData(history=history)
    if scenario.replay_date:
        grid = window_for_date(history, scenario.replay_date, scenario.symbols, scenario.pegged)
    elif scenario.worst_drawdown_asset:
        grid = worst_drawdown_window(history, scenario.worst_drawdown_asset, scenario.symbols, scenario.pegged)
    else:
        raise ConfigError("historical-replay needs replayDate or worstDrawdownAsset")
    return SharedData(grid=grid)


def run_streams(master_seed: int, run_index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(population rng, price rng) for one run."""
    pop_ss, price_ss = np.random.SeedSequence([master_seed, run_index]).spawn(2)
    return np.random.default_rng(pop_ss), np.random.default_rng(price_ss)


def build_grid(scenario: ScenarioConfig, rng: np.random.Generator, shared: SharedData | None = None) -> PriceGrid:
    shared = shared or SharedData()
    if scenario.price_source == "synthetic":
        grid = synthetic_grid(scenario.symbols, scenario.hourly_vols, rng, scenario.correlation,
                              scenario.initial_prices, scenario.pegged)
    elif scenario.price_source == "sampled":
        if shared.history is None:
            raise ConfigError("sampled price source needs a loaded history")
        grid = sample_window(shared.history, rng, scenario.symbols, scenario.pegged)
    else:
        if shared.grid is None:
            raise ConfigError("historical replay needs a resolved grid")
        grid = shared.grid
    if scenario.vol_targets:
        grid = rescale_to_vol(grid, scenario.vol_targets)
    elif scenario.vol_multiplier is not None and scenario.vol_multiplier != 1.0:
        grid = scale_vol(grid, scenario.vol_multiplier)
    return grid


@dataclass
class RunMetrics:
    run_index: int
    final: dict[str, float]
    series: dict[str, np.ndarray] | None = None
    initial_scatter: np.ndarray | None = None  # (users, 2): ltv, portfolio
    final_scatter: np.ndarray | None = None


@dataclass
class RunFailure:
    run_index: int
    message: str


def _mean_ltv(csum: np.ndarray, lsum: np.ndarray) -> np.ndarray:
    pos = csum > 0
    ltv = np.where(pos, lsum / np.where(pos, csum, 1.0), 0.0)
    count = pos.sum(axis=0)
    return np.where(count > 0, ltv.sum(axis=0) / np.maximum(count, 1), 0.0)


def _scatter(csum: np.ndarray, lsum: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ltv = np.where(csum > 0, lsum / np.where(csum > 0, csum, 1.0), np.where(lsum > 0, np.inf, 0.0))
    return np.column_stack([ltv, csum - lsum])


def summarize_path(path: PathResult, initial_collateral: np.ndarray, initial_loans: np.ndarray,
                   run_index: int = 0, light: bool = False) -> RunMetrics:
    """Per-tick series and end-of-day statistics of one simulated day."""
    csum, lsum = path.collateral_value, path.loan_value
    under = ((lsum > 0) & (lsum >= csum)).mean(axis=0)
    debt0 = initial_loans.sum()
    debt_pct = 100.0 * lsum.sum(axis=0) / debt0 if debt0 > 0 else np.zeros(csum.shape[1])
    seized = float(path.seized.sum())
    slippage = float(path.slippage_fee.sum())
    mean_ltv_last = _mean_ltv(csum[:, -1:], lsum[:, -1:])[0]
    final = {
        "undercollateralizedFraction": float(under[-1]),
        "finalMeanLtv": float(mean_ltv_last),
        "totalLiquidatedFunds": seized,
        "outstandingDebtPct": float(debt_pct[-1]),
        "liquidationEvents": float(path.events.sum()),
        "liquidatorProfit": float(path.profit.sum()),
        "slippageFees": slippage,
        "tradingFees": float(path.trading_fee.sum()),
        "meanSlippage": slippage / (2.0 * seized) if seized > 0 else 0.0,
        "initialMeanLtv": float(_mean_ltv(initial_collateral[:, None], initial_loans[:, None])[0]),
        "initialMeanPortfolio": float((initial_collateral - initial_loans).mean()),
    }
    if light:
        return RunMetrics(run_index, final)
    series = {
        "meanLtv": _mean_ltv(csum, lsum),
        "totalLiquidatedFunds": np.cumsum(path.seized),
        "outstandingDebtPct": debt_pct,
        "liquidationEventCount": path.events.astype(float),
        "liquidatorProfitCum": np.cumsum(path.profit),
        "slippageFeesCum": np.cumsum(path.slippage_fee),
        "tradingFeesCum": np.cumsum(path.trading_fee),
        "undercollateralizedFraction": under,
    }
    return RunMetrics(run_index, final, series,
                      _scatter(initial_collateral, initial_loans), _scatter(csum[:, -1], lsum[:, -1]))


def run_once(scenario: ScenarioConfig, run_index: int, shared: SharedData | None = None,
             light: bool = False) -> RunMetrics:
    """Generate one population and one price day from the run's seed and simulate it."""
    pop_rng, price_rng = run_streams(scenario.master_seed, run_index)
    grid = build_grid(scenario, price_rng, shared)
    prices = grid.reorder(scenario.symbols).prices
    book = generate_population(scenario.population, scenario.market, prices[:, 0], pop_rng)
    path = simulate_path(book, prices, scenario.market, scenario.trading_fee,
                         scenario.ltv_threshold_denominator, scenario.repeat_within_tick)
    c0 = (book.collateral * prices[:, 0]).sum(axis=1)
    l0 = (book.loans * prices[:, 0]).sum(axis=1)
    return summarize_path(path, c0, l0, run_index, light)


# -- worker pool --------------------------------------------------------------

_SHARED = SharedData()


def _init_worker(shared: SharedData) -> None:
    global _SHARED
    _SHARED = shared


def _task(args):
    scenario, run_index, light = args
    try:
        return run_once(scenario, run_index, _SHARED, light)
    except LendsimError as exc:
        return RunFailure(run_index, f"{type(exc).__name__}: {exc}")


def map_runs(tasks: Sequence[tuple[ScenarioConfig, int, bool]], shared: SharedData | None = None,
             threads: int = 1) -> list:
    """Run ``(scenario, run_index, light)`` tasks; results come back in task order."""
    shared = shared or SharedData()
    if threads <= 1 or len(tasks) <= 1:
        _init_worker(shared)
        return [_task(t) for t in tasks]
    chunk = max(1, len(tasks) // (8 * threads))
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker, initargs=(shared,)) as ex:
        return list(ex.map(_task, tasks, chunksize=chunk))


@dataclass
class Band:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass
class EnsembleStats:
    series: dict[str, Band]
    finals: dict[str, np.ndarray]  # per-run final values, run order
    runs: list[RunMetrics]
    failures: list[RunFailure]

    def final_mean(self, name: str) -> float:
        return float(np.mean(self.finals[name]))


def _band(x: np.ndarray) -> Band:
    lo, hi = np.quantile(x, [0.025, 0.975], axis=0)
    mean = x.mean(axis=0)
    # keep lower <= mean <= upper under rounding
    return Band(mean, np.minimum(lo, mean), np.maximum(hi, mean))


def _collect(results: list, n_runs: int) -> tuple[list[RunMetrics], list[RunFailure]]:
    runs = [r for r in results if isinstance(r, RunMetrics)]
    failures = [r for r in results if isinstance(r, RunFailure)]
    for f in failures:
        log.warning("run %d failed: %s", f.run_index, f.message)
    if len(failures) > MAX_FAILURE_RATE * n_runs:
        raise EnsembleError(f"{len(failures)} of {n_runs} runs failed; first: {failures[0].message}")
    return runs, failures


def _finals(runs: list[RunMetrics]) -> dict[str, np.ndarray]:
    keys = runs[0].final.keys() if runs else ()
    return {k: np.array([r.final[k] for r in runs]) for k in keys}


def run_ensemble(scenario: ScenarioConfig, threads: int = 1, shared: SharedData | None = None,
                 light: bool = False) -> EnsembleStats:
    """``n_runs`` independent days with fresh populations and grids, plus 95% bands per tick."""
    shared = prepare_shared(scenario) if shared is None else shared
    results = map_runs([(scenario, k, light) for k in range(scenario.n_runs)], shared, threads)
    runs, failures = _collect(results, scenario.n_runs)
    series = {}
    if not light and runs:
        series = {name: _band(np.stack([r.series[name] for r in runs])) for name in SERIES}
    return EnsembleStats(series, _finals(runs), runs, failures)


def aggregate_final_distribution(runs: Sequence[RunMetrics], initial: bool = False) -> np.ndarray:
    """Pooled per-user ``(ltv, portfolio)`` points; frozen users carry LTV = inf."""
    parts = [r.initial_scatter if initial else r.final_scatter for r in runs]
    parts = [p for p in parts if p is not None]
    return np.vstack(parts) if parts else np.zeros((0, 2))


def vol_ladder(scenario: ScenarioConfig, multipliers: Sequence[float], threads: int = 1,
               shared: SharedData | None = None) -> dict[float, EnsembleStats]:
    """Same seeds at every level, so levels differ only in the volatility scaling."""
    shared = prepare_shared(scenario) if shared is None else shared
    return {m: run_ensemble(scenario.replace(vol_multiplier=m, vol_targets=None), threads, shared)
            for m in multipliers}


def scale_scenario(scenario: ScenarioConfig, factor: float) -> ScenarioConfig:
    """Multiply mean portfolio size and every pair volume by ``factor``."""
    market = Market(scenario.market.assets, scenario.market.liquidity.scaled(factor))
    pop = dataclasses.replace(scenario.population, mean_portfolio=scenario.population.mean_portfolio * factor)
    return scenario.replace(market=market, population=pop)


def with_uniform_params(scenario: ScenarioConfig, liq_ltv: float, incentive: float,
                        max_ltv_gap: float = 0.05) -> ScenarioConfig:
    """Set liqLtv and incentive on every asset; maxLtv sits ``max_ltv_gap`` below liqLtv."""
    assets = tuple(
        dataclasses.replace(a, liq_ltv=liq_ltv, max_ltv=max(0.0, liq_ltv - max_ltv_gap),
                            liquidation_incentive=incentive)
        for a in scenario.market.assets
    )
    return scenario.replace(market=Market(assets, scenario.market.liquidity))


@dataclass(frozen=True)
class CellResult:
    liq_ltv: float
    incentive: float
    undercollateralized_fraction: float
    final_mean_ltv: float
    mean_slippage: float
    trading_fee: float
    n_runs: int

    @property
    def theory_incentive(self) -> float:
        """Fee-free break-even incentive ``1 - liqLtv``."""
        return 1.0 - self.liq_ltv

    @property
    def theory_incentive_with_fees(self) -> float:
        return 1.0 - self.liq_ltv - self.mean_slippage - self.trading_fee


@dataclass
class SweepResult:
    surface: list[CellResult]
    frontier: list[CellResult]
    threshold: float


def frontier_cells(surface: Sequence[CellResult], threshold: float) -> list[CellResult]:
    """First cell (by ascending incentive) in each liqLtv column whose fraction exceeds ``threshold``."""
    out = []
    for liq in sorted({c.liq_ltv for c in surface}):
        column = sorted((c for c in surface if c.liq_ltv == liq), key=lambda c: c.incentive)
        hit = next((c for c in column if c.undercollateralized_fraction > threshold), None)
        if hit is not None:
            out.append(hit)
    return out


def sweep_frontier(template: ScenarioConfig, liq_ltv_grid: Sequence[float], inc_grid: Sequence[float],
                   threshold: float, max_ltv_gap: float = 0.05, threads: int = 1,
                   shared: SharedData | None = None) -> SweepResult:
    """Ensemble per (liqLtv, incentive) cell with common seeds across cells."""
    if not len(liq_ltv_grid) or not len(inc_grid):
        raise InvalidInputError("sweep grids must be non-empty")
    if not (0 < threshold <= 1):
        raise InvalidInputError("threshold must lie in (0, 1]")
    shared = prepare_shared(template) if shared is None else shared
    cells = [(float(l), float(i)) for l in liq_ltv_grid for i in inc_grid]
    scenarios = [with_uniform_params(template, l, i, max_ltv_gap) for l, i in cells]
    n = template.n_runs
    tasks = [(s, k, True) for s in scenarios for k in range(n)]
    results = map_runs(tasks, shared, threads)
    surface = []
    for c, (liq, inc) in enumerate(cells):
        runs, _ = _collect(results[c * n:(c + 1) * n], n)
        f = _finals(runs)
        seized = f["totalLiquidatedFunds"].sum()
        slip = f["slippageFees"].sum() / (2.0 * seized) if seized > 0 else 0.0
        surface.append(CellResult(liq, inc, float(f["undercollateralizedFraction"].mean()),
                                  float(f["finalMeanLtv"].mean()), float(slip), template.trading_fee, len(runs)))
    return SweepResult(surface, frontier_cells(surface, threshold), threshold)


def default_market(symbols: Sequence[str] = ("ETH", "BTC", "MATIC", "USDC"), liq_ltv: float = 0.8,
                   max_ltv: float = 0.75, incentive: float = 0.08, close_factor: float = 0.5,
                   volume_scale: float = 1.0) -> Market:
    """Uniform protocol parameters; MATIC pairs get 1e8 of sell-side volume, all others 1e9."""
    assets = tuple(AssetParams(s, max_ltv, liq_ltv, close_factor, incentive, s == "USDC") for s in symbols)
    n = len(symbols)
    vol = np.full((n, n), 1e9)
    for k, s in enumerate(symbols):
        if s == "MATIC":
            vol[k, :] = 1e8
            vol[:, k] = 1e8
    return Market(assets, PairLiquidity(vol * volume_scale))
