"""Initial ensembles of passive user portfolios.

Each user gets flat-Dirichlet collateral and loan weights, same-asset
positions are netted out, and the two sides are rescaled so the account hits
a lognormal portfolio-size target and a lognormal (clamped) LTV target exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Book, Market, check_prices
from .errors import GenerationError, InvalidInputError

MAX_REDRAWS = 100


@dataclass(frozen=True)
class PopulationConfig:
    n_users: int = 200
    mean_portfolio: float = 5000.0
    portfolio_log_std: float = 1.0
    mean_ltv: float = 0.6
    ltv_log_std: float = 0.25
    min_ltv: float = 0.45
    collateral_assets: tuple[str, ...] | None = None  # None: every asset
    loan_assets: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_users < 1:
            raise InvalidInputError("nUsers must be >= 1")
        if not self.mean_portfolio > 0:
            raise InvalidInputError("meanPortfolio must be > 0")
        if not (0 < self.mean_ltv < 1) or not (0 <= self.min_ltv < 1):
            raise InvalidInputError("meanLtv must lie in (0, 1) and minLtv in [0, 1)")
        if self.portfolio_log_std < 0 or self.ltv_log_std < 0:
            raise InvalidInputError("log standard deviations must be >= 0")


def _lognormal_with_mean(mean: float, log_std: float, z: np.ndarray) -> np.ndarray:
    # arithmetic mean of the lognormal equals `mean`; log_std == 0 returns `mean` exactly
    return mean * np.exp(log_std * z - 0.5 * log_std * log_std)


def draw_targets(config: PopulationConfig, rng: np.random.Generator, ltv_caps=None,
                 n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-user (portfolio size, LTV) targets.

    LTVs are clamped to ``[minLtv, cap]``; where a cap falls below ``minLtv``
    the cap wins. Without caps the upper clamp is 0.99.
    """
    n = config.n_users if n is None else n
    z_size = rng.standard_normal(n)
    z_ltv = rng.standard_normal(n)
    size = _lognormal_with_mean(config.mean_portfolio, config.portfolio_log_std, z_size)
    ltv = _lognormal_with_mean(config.mean_ltv, config.ltv_log_std, z_ltv)
    upper = np.full(n, 0.99) if ltv_caps is None else np.asarray(ltv_caps, dtype=float)
    lower = np.minimum(config.min_ltv, upper)
    return size, np.minimum(np.maximum(ltv, lower), upper)


def allocate(rng: np.random.Generator, n_assets: int, n: int = 1,
             collateral_idx: Sequence[int] | None = None,
             loan_idx: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(n, n_assets)`` collateral and loan weights, each row on the simplex."""
    if n_assets < 2:
        raise InvalidInputError("need at least two assets")
    cidx = np.arange(n_assets) if collateral_idx is None else np.asarray(collateral_idx)
    lidx = np.arange(n_assets) if loan_idx is None else np.asarray(loan_idx)
    c = np.zeros((n, n_assets))
    l = np.zeros((n, n_assets))
    for out, idx in ((c, cidx), (l, lidx)):
        w = rng.dirichlet(np.ones(len(idx)), size=n)
        # a one-asset simplex is exactly 1; numpy's sampler can be off by an ulp
        out[:, idx] = 1.0 if len(idx) == 1 else w
    return c, l


def unwind(collateral, loans) -> tuple[np.ndarray, np.ndarray]:
    """Net out positions held on both sides of the same asset."""
    c = np.asarray(collateral, dtype=float)
    l = np.asarray(loans, dtype=float)
    m = np.minimum(c, l)
    return c - m, l - m


def rescale_user(collateral, loans, portfolio_target, ltv_target) -> tuple[np.ndarray, np.ndarray]:
    """Scale each side so net value and LTV hit their targets.

    Works on one user (1-D) or a batch (2-D with per-row targets).
    """
    c = np.asarray(collateral, dtype=float)
    l = np.asarray(loans, dtype=float)
    size = np.asarray(portfolio_target, dtype=float)
    ltv = np.asarray(ltv_target, dtype=float)
    if np.any(ltv >= 1) or np.any(ltv < 0):
        raise InvalidInputError("LTV target must lie in [0, 1)")
    csum = c.sum(axis=-1)
    lsum = l.sum(axis=-1)
    if np.any(csum <= 0) or np.any(lsum <= 0):
        raise InvalidInputError("both sides need positive raw value")
    r_c = size / ((1.0 - ltv) * csum)
    r_l = r_c * ltv * csum / lsum
    return c * np.expand_dims(r_c, -1), l * np.expand_dims(r_l, -1)


def generate_population(config: PopulationConfig, market: Market, initial_prices,
                        rng: np.random.Generator) -> Book:
    """Draw ``config.n_users`` accounts and convert their values to token units at ``initial_prices``."""
    return draw_population(config, market, initial_prices, rng)[0]


def draw_population(config: PopulationConfig, market: Market, initial_prices,
                    rng: np.random.Generator) -> tuple[Book, np.ndarray, np.ndarray]:
    """Like :func:`generate_population` but also returns the (portfolio, LTV) targets."""
    p = check_prices(initial_prices)
    n, n_assets = config.n_users, market.n_assets
    cidx = None if config.collateral_assets is None else [market.index(a) for a in config.collateral_assets]
    lidx = None if config.loan_assets is None else [market.index(a) for a in config.loan_assets]
    c, l = unwind(*allocate(rng, n_assets, n, cidx, lidx))
    for _ in range(MAX_REDRAWS):
        bad = np.flatnonzero((c.sum(axis=1) <= 0) | (l.sum(axis=1) <= 0))
        if bad.size == 0:
            break
        c[bad], l[bad] = unwind(*allocate(rng, n_assets, bad.size, cidx, lidx))
    else:
        raise GenerationError(f"could not draw non-degenerate portfolios in {MAX_REDRAWS} attempts")
    caps = (c @ market.max_ltv) / c.sum(axis=1)
    size, ltv = draw_targets(config, rng, caps, n)
    cv, lv = rescale_user(c, l, size, ltv)
    return Book(cv / p, lv / p), size, ltv


def dump_population(book: Book, symbols: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["userId", "asset", "collateralUnits", "loanUnits"])
        for u in range(book.n_users):
            for k, a in enumerate(symbols):
                w.writerow([u, a, repr(float(book.collateral[u, k])), repr(float(book.loans[u, k]))])


def load_population(path, symbols: Sequence[str]) -> Book:
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["userId", "asset", "collateralUnits", "loanUnits"]:
            raise InvalidInputError("population CSV header must be userId,asset,collateralUnits,loanUnits")
        for r in reader:
            rows[(int(r["userId"]), r["asset"])] = (float(r["collateralUnits"]), float(r["loanUnits"]))
    n = 1 + max(u for u, _ in rows) if rows else 0
    c = np.zeros((n, len(symbols)))
    l = np.zeros((n, len(symbols)))
    for (u, a), (cu, lu) in rows.items():
        if a not in symbols:
            raise InvalidInputError(f"unknown asset {a!r} in population file")
        k = list(symbols).index(a)
        c[u, k], l[u, k] = cu, lu
    return Book(c, l)
