"""Swap economics for a liquidation that seizes collateral j and repays loan i.

All amounts are numeraire values. A liquidator seizing ``a`` of collateral j
pays back

    p(a) = [1 - (inc_j + sigma(a) + t)] * a

of the loan and keeps ``(inc_j - sigma(a) - t) * a``, where
``sigma(a) = s * (a / V[j, i]) ** gamma`` is the slippage fraction and ``t`` a
constant trading-fee fraction. With ``gamma == 1`` the inverse ``a(p)`` and the
profit-maximising seize amount have closed forms; other exponents fall back to
root finding.

Functions accept scalars or numpy arrays for the amount argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PairLiquidity
from .errors import InfeasibleRepayError, InfeasibleSwapError, InvalidInputError

DEFAULT_TRADING_FEE = 0.003


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _slip(a, coefficient: float, volume: float, exponent: float):
    if exponent == 1.0:
        return coefficient * (a / volume)
    return coefficient * (a / volume) ** exponent


def slippage_fraction(amount, j: int, i: int, liquidity: PairLiquidity):
    a = np.asarray(amount, dtype=float)
    if np.any(a < 0):
        raise InvalidInputError("swap amount must be >= 0")
    if j == i:
        return _out(np.zeros_like(a))
    return _out(_slip(a, liquidity.coefficient, liquidity.volumes[j, i], liquidity.exponent))


def repay_for_seize(amount, j: int, i: int, incentive: float, liquidity: PairLiquidity,
                    trading_fee: float = 0.0):
    """Loan value repaid after selling ``amount`` of collateral j into asset i.

    Same-asset liquidations need no swap and repay the seized amount one-for-one.
    """
    a = np.asarray(amount, dtype=float)
    if j == i:
        return _out(a)
    sigma = slippage_fraction(a, j, i, liquidity)
    total = incentive + sigma + trading_fee
    if np.any((total >= 1.0) & (a > 0)):
        raise InfeasibleSwapError("incentive + slippage + trading fee >= 1; repay would be <= 0")
    return _out((1.0 - total) * a)


def liquidator_profit(amount, j: int, i: int, incentive: float, liquidity: PairLiquidity,
                      trading_fee: float = 0.0):
    """``(inc - sigma(a) - t) * a``; negative when fees exceed the incentive."""
    a = np.asarray(amount, dtype=float)
    if np.any(a < 0):
        raise InvalidInputError("swap amount must be >= 0")
    if j == i:
        return _out(np.zeros_like(a))
    sigma = slippage_fraction(a, j, i, liquidity)
    return _out((incentive - sigma - trading_fee) * a)


def closed_form_seize(repay, retained, s_tilde):
    """Vectorised linear-slippage inverse of ``p = retained*a - s_tilde*a**2``.

    Returns ``inf`` where no seize amount reaches ``repay``. Uses the
    cancellation-free form ``2p / (q (1 + sqrt(1 - 4 s p / q^2)))``.
    """
    p = np.asarray(repay, dtype=float)
    st = np.asarray(s_tilde, dtype=float)
    q = np.asarray(retained, dtype=float)
    disc = 1.0 - 4.0 * st * p / (q * q)
    with np.errstate(invalid="ignore"):
        a = 2.0 * p / (q * (1.0 + np.sqrt(np.maximum(disc, 0.0))))
    return np.where(disc < 0, np.inf, a)


def bisect_seize(repay, retained, coefficient: float, volume: float, exponent: float,
                 max_iter: int = 400):
    """Vectorised root finding of ``retained*a - s*(a/V)**g * a = repay`` on the rising branch.

    Returns ``inf`` where ``repay`` exceeds the largest achievable repayment.
    """
    p = np.atleast_1d(np.asarray(repay, dtype=float)).copy()
    q = np.broadcast_to(np.asarray(retained, dtype=float), p.shape).copy()
    if coefficient == 0.0:
        out = p / q
        return out if np.ndim(repay) else float(out[0])

    def f(a):
        return q * a - _slip(a, coefficient, volume, exponent) * a

    a_peak = volume * (q / (coefficient * (exponent + 1.0))) ** (1.0 / exponent)
    feasible = f(a_peak) >= p
    lo = np.where(feasible, p / q, 0.0)
    hi = np.where(feasible, a_peak, 0.0)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        done = (mid <= lo) | (mid >= hi)
        if np.all(done):
            break
        below = f(mid) < p
        lo = np.where(below & ~done, mid, lo)
        hi = np.where(~below & ~done, mid, hi)
    pick = np.where(np.abs(f(lo) - p) <= np.abs(f(hi) - p), lo, hi)
    out = np.where(feasible, pick, np.inf)
    return out if np.ndim(repay) else float(out[0])


def seize_for_repay(repay, j: int, i: int, incentive: float, liquidity: PairLiquidity,
                    trading_fee: float = 0.0):
    """Collateral value that must be seized so the swap repays ``repay`` of loan i."""
    p = np.asarray(repay, dtype=float)
    if np.any(p < 0):
        raise InvalidInputError("repay amount must be >= 0")
    if j == i:
        return _out(p)
    if liquidity.exponent != 1.0:
        return seize_for_repay_numeric(repay, j, i, incentive, liquidity, trading_fee)
    q = 1.0 - incentive - trading_fee
    if q <= 0:
        raise InfeasibleSwapError("incentive + trading fee >= 1")
    a = closed_form_seize(p, q, liquidity.s_tilde(j, i))
    if np.any(np.isinf(a)):
        cap = q * q / (4.0 * liquidity.s_tilde(j, i))
        raise InfeasibleRepayError(f"repay exceeds the swappable maximum {cap:.6g}")
    return _out(a)


def seize_for_repay_numeric(repay, j: int, i: int, incentive: float, liquidity: PairLiquidity,
                            trading_fee: float = 0.0):
    p = np.asarray(repay, dtype=float)
    if np.any(p < 0):
        raise InvalidInputError("repay amount must be >= 0")
    if j == i:
        return _out(p)
    q = 1.0 - incentive - trading_fee
    if q <= 0:
        raise InfeasibleSwapError("incentive + trading fee >= 1")
    a = bisect_seize(p, q, liquidity.coefficient, liquidity.volumes[j, i], liquidity.exponent)
    if np.any(np.isinf(a)):
        raise InfeasibleRepayError("repay exceeds the largest achievable repayment")
    return _out(a)


def optimal_seize(j: int, i: int, incentive: float, liquidity: PairLiquidity,
                  trading_fee: float = 0.0) -> tuple[float, float]:
    """Profit-maximising seize amount and the repay it produces.

    ``(inf, inf)`` means market impact never binds (same asset or zero slippage).
    """
    if j == i or liquidity.coefficient == 0.0:
        return np.inf, np.inf
    margin = incentive - trading_fee
    if margin <= 0:
        return 0.0, 0.0
    g = liquidity.exponent
    a_bar = liquidity.volumes[j, i] * (margin / (liquidity.coefficient * (g + 1.0))) ** (1.0 / g)
    sigma = _slip(a_bar, liquidity.coefficient, liquidity.volumes[j, i], g)
    return float(a_bar), float((1.0 - (incentive + sigma + trading_fee)) * a_bar)


@dataclass(frozen=True)
class SwapQuote:
    pair_from: int
    pair_to: int
    seize_amount: float
    slippage_fraction: float
    trading_fee_fraction: float
    repaid_amount: float
    liquidator_profit: float

    @property
    def slippage_fee(self) -> float:
        # profit and repay formulas each charge sigma*a, so the ledger books it twice
        return 2.0 * self.slippage_fraction * self.seize_amount

    @property
    def trading_fee(self) -> float:
        return self.trading_fee_fraction * self.seize_amount


def quote(amount: float, j: int, i: int, incentive: float, liquidity: PairLiquidity,
          trading_fee: float = 0.0) -> SwapQuote:
    sigma = slippage_fraction(amount, j, i, liquidity)
    t = 0.0 if j == i else trading_fee
    return SwapQuote(j, i, float(amount), float(sigma), t,
                     float(repay_for_seize(amount, j, i, incentive, liquidity, trading_fee)),
                     float(liquidator_profit(amount, j, i, incentive, liquidity, trading_fee)))
