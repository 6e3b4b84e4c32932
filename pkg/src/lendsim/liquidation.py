"""Per-tick liquidation engine.

A liquidatable user (LTV above its weighted liquidation threshold) receives at
most one liquidation per tick by default. For every (collateral j, loan i)
pair the liquidator seizes

    a* = min(a_bar[j, i], c_j, a(close_i * l_i))

and the pair with the highest strictly positive profit wins; exact ties go to
the lowest ``(j, i)`` in lexicographic order.

:func:`best_plan` / :func:`apply_plan` are the single-user reference path.
:func:`best_plans` solves a whole batch with numpy and drives both
:func:`liquidation_tick` and the day-long :func:`simulate_path` loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Book, Market, UserAccount, check_prices, mark_to_market
from .errors import InfeasibleRepayError, InfeasibleSwapError, StalePlanError
from .execution import (
    DEFAULT_TRADING_FEE,
    _slip,
    bisect_seize,
    closed_form_seize,
    liquidator_profit,
    optimal_seize,
    repay_for_seize,
    seize_for_repay,
    slippage_fraction,
)

ZERO_TOL = 1e-12
MAX_REPEATS = 1000


@dataclass(frozen=True)
class LiquidationPlan:
    user_id: int
    collateral_asset: int
    loan_asset: int
    seize_amount: float
    repaid_amount: float
    profit: float
    slippage_fee: float
    trading_fee: float
    tick: int = 0


def liquidatable_mask(collateral_total, loan_total, threshold_numerator, denominator="collateral"):
    """Elementwise liquidation trigger on value sums (any matching shapes)."""
    c = np.asarray(collateral_total, dtype=float)
    l = np.asarray(loan_total, dtype=float)
    num = np.asarray(threshold_numerator, dtype=float)
    pos = c > 0
    safe_c = np.where(pos, c, 1.0)
    ltv = l / safe_c
    if denominator == "collateral":
        thr = num / safe_c
    else:
        den = c - l
        thr = np.where(den != 0, num / np.where(den != 0, den, 1.0), np.inf)
    return pos & (l > 0) & (ltv > thr)


def find_liquidatable(book: Book, prices, market: Market, denominator: str = "collateral") -> np.ndarray:
    c, l = book.values(prices)
    mask = liquidatable_mask(c.sum(axis=1), l.sum(axis=1), c @ market.liq_ltv, denominator)
    return np.flatnonzero(mask)


def best_plan(user: UserAccount, prices, market: Market, trading_fee: float = DEFAULT_TRADING_FEE,
              user_id: int = 0, tick: int = 0) -> LiquidationPlan | None:
    """Most profitable single-pair liquidation for one user, or None."""
    cvals, lvals = mark_to_market(user, prices)
    liq = market.liquidity
    best = None
    for j in range(market.n_assets):
        if cvals[j] <= 0:
            continue
        inc = market.incentive[j]
        for i in range(market.n_assets):
            # same-asset repayment carries no incentive, so it can never be profitable
            if i == j or lvals[i] <= 0:
                continue
            a_bar, _ = optimal_seize(j, i, inc, liq, trading_fee)
            try:
                loan_cap = seize_for_repay(market.close_factor[i] * lvals[i], j, i, inc, liq, trading_fee)
            except InfeasibleRepayError:
                loan_cap = np.inf
            except InfeasibleSwapError:
                continue
            a = min(a_bar, cvals[j], loan_cap)
            if not a > 0:
                continue
            profit = liquidator_profit(a, j, i, inc, liq, trading_fee)
            if profit > 0 and (best is None or profit > best.profit):
                sigma = slippage_fraction(a, j, i, liq)
                best = LiquidationPlan(
                    user_id, j, i, float(a),
                    float(repay_for_seize(a, j, i, inc, liq, trading_fee)),
                    float(profit), 2.0 * sigma * a, trading_fee * a, tick,
                )
    return best


def apply_plan(user: UserAccount, plan: LiquidationPlan, prices, market: Market) -> UserAccount:
    """Remove ``a`` of collateral value and ``p`` of loan value at current prices."""
    p = check_prices(prices)
    if plan.seize_amount == 0:
        return UserAccount(user.collateral_units.copy(), user.loan_units.copy())
    j, i = plan.collateral_asset, plan.loan_asset
    cvals, lvals = mark_to_market(user, p)
    if plan.seize_amount > cvals[j] * (1 + 1e-12):
        raise StalePlanError(f"seize {plan.seize_amount} exceeds collateral value {cvals[j]}")
    if plan.repaid_amount > market.close_factor[i] * lvals[i] * (1 + 1e-9):
        raise StalePlanError("repay exceeds the close-factor cap at current prices")
    c = user.collateral_units.copy()
    l = user.loan_units.copy()
    c[j] = 0.0 if plan.seize_amount >= cvals[j] else c[j] - plan.seize_amount / p[j]
    l[i] = l[i] - plan.repaid_amount / p[i]
    c[np.abs(c) <= ZERO_TOL] = 0.0
    l[np.abs(l) <= ZERO_TOL] = 0.0
    return UserAccount(np.maximum(c, 0.0), np.maximum(l, 0.0))


@dataclass
class PlanBatch:
    """Best plan per row of a batch; rows with ``valid == False`` have no rational liquidation."""

    valid: np.ndarray
    collateral_asset: np.ndarray
    loan_asset: np.ndarray
    seize: np.ndarray
    repay: np.ndarray
    profit: np.ndarray
    sigma: np.ndarray
    trading_fee: float

    @property
    def slippage_fee(self) -> np.ndarray:
        return 2.0 * self.sigma * self.seize

    @property
    def trading_fees(self) -> np.ndarray:
        return self.trading_fee * self.seize


def best_plans(cvals: np.ndarray, lvals: np.ndarray, market: Market,
               trading_fee: float = DEFAULT_TRADING_FEE) -> PlanBatch:
    """Vectorised :func:`best_plan` over rows of ``(n, assets)`` value arrays."""
    n, n_assets = cvals.shape
    liq = market.liquidity
    profit_best = np.zeros(n)
    j_best = np.full(n, -1)
    i_best = np.full(n, -1)
    a_best = np.zeros(n)
    sig_best = np.zeros(n)
    for j in range(n_assets):
        cj = cvals[:, j]
        has_c = cj > 0
        if not has_c.any():
            continue
        inc = market.incentive[j]
        retained = 1.0 - inc - trading_fee
        if retained <= 0:
            continue
        for i in range(n_assets):
            if i == j:
                continue
            rows = np.flatnonzero(has_c & (lvals[:, i] > 0))
            if rows.size == 0:
                continue
            a_bar, _ = optimal_seize(j, i, inc, liq, trading_fee)
            target = market.close_factor[i] * lvals[rows, i]
            vol = liq.volumes[j, i]
            if liq.exponent == 1.0:
                loan_cap = closed_form_seize(target, retained, liq.coefficient / vol)
            else:
                loan_cap = bisect_seize(target, retained, liq.coefficient, vol, liq.exponent)
            a = np.minimum(np.minimum(a_bar, cj[rows]), loan_cap)
            sigma = _slip(a, liq.coefficient, vol, liq.exponent)
            profit = (inc - sigma - trading_fee) * a
            better = (a > 0) & (profit > profit_best[rows])
            r = rows[better]
            profit_best[r] = profit[better]
            j_best[r] = j
            i_best[r] = i
            a_best[r] = a[better]
            sig_best[r] = sigma[better]
    valid = j_best >= 0
    inc_rows = np.where(valid, market.incentive[np.maximum(j_best, 0)], 0.0)
    repay = (1.0 - (inc_rows + sig_best + trading_fee)) * a_best
    return PlanBatch(valid, j_best, i_best, a_best, np.where(valid, repay, 0.0),
                     profit_best, sig_best, trading_fee)


def _apply_batch(book: Book, users: np.ndarray, batch: PlanBatch, prices: np.ndarray) -> np.ndarray:
    """Apply valid plans in place; returns the user ids that were liquidated."""
    v = batch.valid
    u = users[v]
    j = batch.collateral_asset[v]
    i = batch.loan_asset[v]
    a = batch.seize[v]
    p = batch.repay[v]
    cur = book.collateral[u, j]
    full = a >= cur * prices[j]
    new_c = np.where(full, 0.0, cur - a / prices[j])
    new_l = book.loans[u, i] - p / prices[i]
    new_c[np.abs(new_c) <= ZERO_TOL] = 0.0
    new_l[np.abs(new_l) <= ZERO_TOL] = 0.0
    book.collateral[u, j] = np.maximum(new_c, 0.0)
    book.loans[u, i] = np.maximum(new_l, 0.0)
    return u


def _plans_from_batch(users, batch: PlanBatch, tick: int) -> list[LiquidationPlan]:
    out = []
    for k in np.flatnonzero(batch.valid):
        out.append(LiquidationPlan(
            int(users[k]), int(batch.collateral_asset[k]), int(batch.loan_asset[k]),
            float(batch.seize[k]), float(batch.repay[k]), float(batch.profit[k]),
            float(batch.slippage_fee[k]), float(batch.trading_fees[k]), tick,
        ))
    return out


def liquidation_tick(book: Book, prices, market: Market, trading_fee: float = DEFAULT_TRADING_FEE,
                     tick: int = 0, denominator: str = "collateral",
                     repeat_within_tick: bool = False) -> tuple[Book, list[LiquidationPlan]]:
    """Liquidate every liquidatable user once (or until healthy) at one price vector.

    Returns a new book and the executed plans ordered by user id.
    """
    p = check_prices(prices)
    book = book.copy()
    plans: list[LiquidationPlan] = []
    users = find_liquidatable(book, p, market, denominator)
    for _ in range(MAX_REPEATS if repeat_within_tick else 1):
        if users.size == 0:
            break
        batch = best_plans(book.collateral[users] * p, book.loans[users] * p, market, trading_fee)
        plans.extend(_plans_from_batch(users, batch, tick))
        acted = _apply_batch(book, users, batch, p)
        if not repeat_within_tick:
            break
        users = np.intersect1d(acted, find_liquidatable(book, p, market, denominator))
    plans.sort(key=lambda pl: pl.user_id)
    return book, plans


@dataclass
class PathResult:
    """Per-tick state of one simulated day.

    ``collateral_value`` and ``loan_value`` are ``(users, ticks)`` end-of-tick
    totals; the remaining arrays are per-tick liquidation aggregates.
    """

    collateral_value: np.ndarray
    loan_value: np.ndarray
    events: np.ndarray
    seized: np.ndarray
    repaid: np.ndarray
    profit: np.ndarray
    slippage_fee: np.ndarray
    trading_fee: np.ndarray
    book: Book
    plans: list[LiquidationPlan] = field(default_factory=list)


def _empty_result(book: Book, n_ticks: int) -> dict:
    z = lambda: np.zeros(n_ticks)  # noqa: E731
    return dict(events=np.zeros(n_ticks, dtype=np.int64), seized=z(), repaid=z(), profit=z(),
                slippage_fee=z(), trading_fee=z())


def _record(acc: dict, t: int, batch: PlanBatch):
    v = batch.valid
    acc["events"][t] += int(v.sum())
    acc["seized"][t] += batch.seize[v].sum()
    acc["repaid"][t] += batch.repay[v].sum()
    acc["profit"][t] += batch.profit[v].sum()
    acc["slippage_fee"][t] += batch.slippage_fee[v].sum()
    acc["trading_fee"][t] += batch.trading_fees[v].sum()


def simulate_path(book: Book, prices: np.ndarray, market: Market,
                  trading_fee: float = DEFAULT_TRADING_FEE, denominator: str = "collateral",
                  repeat_within_tick: bool = False, record_plans: bool = False) -> PathResult:
    """Run a whole price path, only visiting ticks where someone is liquidatable.

    Valuations for every (user, tick) are computed up front; after a user is
    liquidated at tick t only that user's rows from t onward are recomputed.
    The outcome is the same as calling :func:`liquidation_tick` at every tick.
    """
    prices = np.asarray(prices, dtype=float)
    check_prices(prices)
    book = book.copy()
    cu, lu = book.collateral, book.loans
    n_ticks = prices.shape[1]
    w = market.liq_ltv
    csum = cu @ prices
    lsum = lu @ prices
    num = (cu * w) @ prices
    acc = _empty_result(book, n_ticks)
    plans: list[LiquidationPlan] = []

    def next_tick(rows: np.ndarray, start: int) -> np.ndarray:
        if start >= n_ticks:
            return np.full(rows.size, n_ticks)
        m = liquidatable_mask(csum[rows, start:], lsum[rows, start:], num[rows, start:], denominator)
        return np.where(m.any(axis=1), m.argmax(axis=1) + start, n_ticks)

    nxt = next_tick(np.arange(book.n_users), 0)
    while True:
        t = int(nxt.min()) if nxt.size else n_ticks
        if t >= n_ticks:
            break
        due = np.flatnonzero(nxt == t)
        p = prices[:, t]
        users = due
        for _ in range(MAX_REPEATS if repeat_within_tick else 1):
            batch = best_plans(cu[users] * p, lu[users] * p, market, trading_fee)
            _record(acc, t, batch)
            if record_plans:
                plans.extend(_plans_from_batch(users, batch, t))
            acted = _apply_batch(book, users, batch, p)
            if acted.size:
                pt = prices[:, t:]
                csum[acted, t:] = cu[acted] @ pt
                lsum[acted, t:] = lu[acted] @ pt
                num[acted, t:] = (cu[acted] * w) @ pt
            if not repeat_within_tick or acted.size == 0:
                break
            still = liquidatable_mask(csum[acted, t], lsum[acted, t], num[acted, t], denominator)
            users = acted[still]
            if users.size == 0:
                break
        nxt[due] = next_tick(due, t + 1)
    plans.sort(key=lambda pl: (pl.tick, pl.user_id))
    return PathResult(csum, lsum, book=book, plans=plans, **acc)


def simulate_path_reference(book: Book, prices: np.ndarray, market: Market,
                            trading_fee: float = DEFAULT_TRADING_FEE, denominator: str = "collateral",
                            repeat_within_tick: bool = False) -> PathResult:
    """Tick-by-tick loop over :func:`liquidation_tick`; slow, used to check :func:`simulate_path`."""
    prices = np.asarray(prices, dtype=float)
    n_ticks = prices.shape[1]
    csum = np.zeros((book.n_users, n_ticks))
    lsum = np.zeros((book.n_users, n_ticks))
    acc = _empty_result(book, n_ticks)
    all_plans = []
    for t in range(n_ticks):
        book, plans = liquidation_tick(book, prices[:, t], market, trading_fee, t, denominator,
                                       repeat_within_tick)
        for pl in plans:
            acc["events"][t] += 1
            acc["seized"][t] += pl.seize_amount
            acc["repaid"][t] += pl.repaid_amount
            acc["profit"][t] += pl.profit
            acc["slippage_fee"][t] += pl.slippage_fee
            acc["trading_fee"][t] += pl.trading_fee
        all_plans.extend(plans)
        c, l = book.values(prices[:, t])
        csum[:, t] = c.sum(axis=1)
        lsum[:, t] = l.sum(axis=1)
    return PathResult(csum, lsum, book=book, plans=all_plans, **acc)
