"""Asset and user state, mark-to-market valuation and LTV accounting.

Users hold token *quantities*; every numeraire value is derived from a price
vector at the tick being evaluated. Scalar helpers work on one
:class:`UserAccount`; :class:`Book` holds a whole population as ``(users, assets)``
arrays and is what the simulation loop mutates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

DENOMINATORS = ("collateral", "netPortfolio")


@dataclass(frozen=True)
class AssetParams:
    symbol: str
    max_ltv: float
    liq_ltv: float
    close_factor: float = 0.5
    liquidation_incentive: float = 0.0
    is_numeraire_pegged: bool = False

    def __post_init__(self):
        if not (0.0 <= self.max_ltv <= self.liq_ltv < 1.0):
            raise InvalidInputError(
                f"{self.symbol}: need 0 <= maxLtv <= liqLtv < 1, got {self.max_ltv}, {self.liq_ltv}"
            )
        if not (0.0 < self.close_factor <= 1.0):
            raise InvalidInputError(f"{self.symbol}: closeFactor must lie in (0, 1]")
        if not (0.0 <= self.liquidation_incentive < 1.0):
            raise InvalidInputError(f"{self.symbol}: liquidationIncentive must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class PairLiquidity:
    """Sell-side volume ``volumes[j, i]`` for swapping asset j into asset i.

    Slippage for a swap of value ``a`` is ``coefficient * (a / volumes[j, i]) ** exponent``.
    Diagonal entries are never read.
    """

    volumes: np.ndarray
    coefficient: float = 1.0
    exponent: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.volumes, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidInputError("volume matrix must be square")
        off = ~np.eye(v.shape[0], dtype=bool)
        if not np.all(v[off] > 0) or not np.all(np.isfinite(v[off])):
            raise InvalidInputError("sell-side volumes must be finite and > 0 for every pair j != i")
        if self.coefficient < 0 or not np.isfinite(self.coefficient):
            raise InvalidInputError("slippage coefficient must be finite and >= 0")
        if not self.exponent > 0:
            raise InvalidInputError("slippage exponent must be > 0")
        object.__setattr__(self, "volumes", v)

    def volume(self, j: int, i: int) -> float:
        return float(self.volumes[j, i])

    def s_tilde(self, j: int, i: int) -> float:
        """Effective linear slippage per unit of value, ``s / V[j, i]``."""
        return self.coefficient / self.volumes[j, i]

    def scaled(self, factor: float) -> "PairLiquidity":
        return PairLiquidity(self.volumes * factor, self.coefficient, self.exponent)


@dataclass(frozen=True, eq=False)
class Market:
    """Protocol parameters for an ordered asset set plus pair liquidity."""

    assets: tuple[AssetParams, ...]
    liquidity: PairLiquidity
    max_ltv: np.ndarray = field(init=False, repr=False)
    liq_ltv: np.ndarray = field(init=False, repr=False)
    close_factor: np.ndarray = field(init=False, repr=False)
    incentive: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        assets = tuple(self.assets)
        symbols = [a.symbol for a in assets]
        if len(set(symbols)) != len(symbols):
            raise InvalidInputError("duplicate asset symbols")
        if self.liquidity.volumes.shape[0] != len(assets):
            raise InvalidInputError("liquidity matrix size does not match asset count")
        object.__setattr__(self, "assets", assets)
        for name, attr in [("max_ltv", "max_ltv"), ("liq_ltv", "liq_ltv"),
                           ("close_factor", "close_factor"), ("incentive", "liquidation_incentive")]:
            object.__setattr__(self, name, np.array([getattr(a, attr) for a in assets], dtype=float))

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(a.symbol for a in self.assets)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise InvalidInputError(f"unknown asset {symbol!r}") from None

    def pegged_mask(self) -> np.ndarray:
        return np.array([a.is_numeraire_pegged for a in self.assets])


@dataclass(frozen=True, eq=False)
class UserAccount:
    collateral_units: np.ndarray
    loan_units: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.collateral_units, dtype=float)
        l = np.asarray(self.loan_units, dtype=float)
        if c.shape != l.shape or c.ndim != 1:
            raise InvalidInputError("collateral and loan vectors must be 1-D and equal length")
        if np.any(c < 0) or np.any(l < 0):
            raise InvalidInputError("token quantities must be >= 0")
        object.__setattr__(self, "collateral_units", c)
        object.__setattr__(self, "loan_units", l)


def check_prices(prices) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise InvalidInputError("prices must be finite and strictly positive")
    return p


def mark_to_market(user: UserAccount, prices) -> tuple[np.ndarray, np.ndarray]:
    p = check_prices(prices)
    return user.collateral_units * p, user.loan_units * p


def portfolio_value(user: UserAccount, prices) -> float:
    c, l = mark_to_market(user, prices)
    return float(c.sum() - l.sum())


def ltv_from_sums(collateral, loans):
    """LTV with the degenerate conventions: 0/0 -> 0 and x/0 -> +inf."""
    c = np.asarray(collateral, dtype=float)
    l = np.asarray(loans, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(c > 0, l / np.where(c > 0, c, 1.0), np.where(l > 0, np.inf, 0.0))
    return out if out.ndim else float(out)


def user_ltv(user: UserAccount, prices) -> float:
    c, l = mark_to_market(user, prices)
    return ltv_from_sums(c.sum(), l.sum())


def weighted_threshold(collateral_values, weights, loan_total, denominator: str = "collateral"):
    """Collateral-value-weighted threshold for one user or a batch.

    ``collateral_values`` has shape ``(..., assets)``. With ``denominator="netPortfolio"``
    the weighted sum is divided by net value ``C - L`` instead of ``C``.
    """
    cv = np.asarray(collateral_values, dtype=float)
    num = cv @ np.asarray(weights, dtype=float)
    csum = cv.sum(axis=-1)
    if denominator == "collateral":
        den = csum
    elif denominator == "netPortfolio":
        den = csum - np.asarray(loan_total, dtype=float)
    else:
        raise InvalidInputError(f"unknown threshold denominator {denominator!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(csum > 0, num / np.where(den != 0, den, 1.0), 0.0)
        out = np.where((csum > 0) & (den == 0), np.inf, out)
    return out if out.ndim else float(out)


def user_liq_ltv(user: UserAccount, prices, market: Market, denominator: str = "collateral") -> float:
    c, l = mark_to_market(user, prices)
    return weighted_threshold(c, market.liq_ltv, l.sum(), denominator)


def user_max_ltv(user: UserAccount, prices, market: Market, denominator: str = "collateral") -> float:
    c, l = mark_to_market(user, prices)
    return weighted_threshold(c, market.max_ltv, l.sum(), denominator)


def is_frozen(user: UserAccount, prices) -> bool:
    """Loans outstanding with no collateral left; excluded from liquidation."""
    c, l = mark_to_market(user, prices)
    return bool(c.sum() == 0 and l.sum() > 0)


def is_liquidatable(user: UserAccount, prices, market: Market, denominator: str = "collateral") -> bool:
    c, l = mark_to_market(user, prices)
    csum, lsum = c.sum(), l.sum()
    if lsum <= 0 or csum <= 0:
        return False
    return bool(ltv_from_sums(csum, lsum) > weighted_threshold(c, market.liq_ltv, lsum, denominator))


def is_undercollateralized(user: UserAccount, prices) -> bool:
    c, l = mark_to_market(user, prices)
    return bool(l.sum() > 0 and l.sum() >= c.sum())


@dataclass(eq=False)
class Book:
    """A population stored as ``(users, assets)`` token-quantity arrays."""

    collateral: np.ndarray
    loans: np.ndarray

    def __post_init__(self):
        self.collateral = np.array(self.collateral, dtype=float)
        self.loans = np.array(self.loans, dtype=float)
        if self.collateral.shape != self.loans.shape or self.collateral.ndim != 2:
            raise InvalidInputError("book arrays must both be (users, assets)")

    @classmethod
    def from_accounts(cls, accounts: Sequence[UserAccount]) -> "Book":
        return cls(np.stack([a.collateral_units for a in accounts]),
                   np.stack([a.loan_units for a in accounts]))

    @property
    def n_users(self) -> int:
        return self.collateral.shape[0]

    def account(self, u: int) -> UserAccount:
        return UserAccount(self.collateral[u].copy(), self.loans[u].copy())

    def accounts(self) -> list[UserAccount]:
        return [self.account(u) for u in range(self.n_users)]

    def copy(self) -> "Book":
        return Book(self.collateral.copy(), self.loans.copy())

    def values(self, prices) -> tuple[np.ndarray, np.ndarray]:
        p = check_prices(prices)
        return self.collateral * p, self.loans * p

    def ltv(self, prices) -> np.ndarray:
        c, l = self.values(prices)
        return ltv_from_sums(c.sum(axis=1), l.sum(axis=1))

    def portfolio(self, prices) -> np.ndarray:
        c, l = self.values(prices)
        return c.sum(axis=1) - l.sum(axis=1)
