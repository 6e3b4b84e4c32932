import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import pair_market
from lendsim.core import Book, UserAccount, user_ltv
from lendsim.errors import StalePlanError
from lendsim.execution import seize_for_repay
from lendsim.liquidation import (
    LiquidationPlan,
    apply_plan,
    best_plan,
    best_plans,
    find_liquidatable,
    liquidation_tick,
    simulate_path,
    simulate_path_reference,
)
from lendsim.population import PopulationConfig, generate_population

ONES = np.ones(2)


def acct(c, l):
    return UserAccount(np.array(c, float), np.array(l, float))


def frictionless(inc=0.05, **kw):
    return pair_market(incentive=inc, coefficient=0.0, **kw)


def test_find_liquidatable_examples():
    m = pair_market(liq_ltv=0.85)
    book = Book.from_accounts([acct([100, 0], [0, 70]), acct([100, 0], [0, 86]), acct([0, 0], [0, 5])])
    assert find_liquidatable(book, ONES, m).tolist() == [1]


def test_generated_population_has_no_liquidatable_users():
    m = pair_market(n=4, liq_ltv=0.8, max_ltv=0.75)
    p = np.array([2000.0, 30000.0, 1.0, 1.0])
    book = generate_population(PopulationConfig(n_users=2000), m, p, np.random.default_rng(11))
    assert find_liquidatable(book, p, m).size == 0
    assert all(user_ltv(a, p) <= 0.75 + 1e-12 for a in book.accounts())


def test_best_plan_close_factor_binds():
    m = pair_market(incentive=0.05, volume=1e8)
    u = acct([10_000, 0], [0, 9_000])
    plan = best_plan(u, ONES, m, trading_fee=0.0)
    assert plan.seize_amount == pytest.approx(seize_for_repay(4_500, 0, 1, 0.05, m.liquidity), rel=1e-12)
    assert plan.repaid_amount == pytest.approx(4_500, rel=1e-12)


def test_best_plan_prefers_higher_incentive():
    m = pair_market(n=3, incentives=[0.05, 0.10, 0.0], volume=1e8)
    u = acct([500, 500, 0], [0, 0, 900])
    plan = best_plan(u, np.ones(3), m, trading_fee=0.0)
    assert (plan.collateral_asset, plan.loan_asset) == (1, 2)


def test_best_plan_none_without_incentive():
    m = pair_market(incentive=0.0)
    assert best_plan(acct([100, 0], [0, 95]), ONES, m) is None


def test_best_plan_tie_goes_to_lowest_pair():
    m = pair_market(n=3, incentive=0.05)
    u = acct([400, 400, 0], [0, 0, 700])
    plan = best_plan(u, np.ones(3), m)
    assert (plan.collateral_asset, plan.loan_asset) == (0, 2)
    batch = best_plans(np.array([[400.0, 400, 0]]), np.array([[0.0, 0, 700]]), m)
    assert (batch.collateral_asset[0], batch.loan_asset[0]) == (0, 2)


def test_apply_plan_decreases_below_one_minus_x():
    m = frictionless(0.05)
    u = acct([1000, 0], [0, 900])
    plan = best_plan(u, ONES, m, trading_fee=0.0)
    after = apply_plan(u, plan, ONES, m)
    a, p = 450 / 0.95, 450.0
    assert plan.seize_amount == pytest.approx(a) and plan.repaid_amount == pytest.approx(p)
    assert user_ltv(after, ONES) == pytest.approx((900 - p) / (1000 - a), rel=1e-12)
    assert user_ltv(after, ONES) < 0.9


def test_apply_plan_increases_above_one_minus_x():
    m = frictionless(0.05)
    u = acct([1000, 0], [0, 980])
    plan = best_plan(u, ONES, m, trading_fee=0.0)
    after = apply_plan(u, plan, ONES, m)
    assert user_ltv(after, ONES) == pytest.approx(490 / (1000 - 490 / 0.95), rel=1e-12)
    assert user_ltv(after, ONES) > 0.98


def test_apply_zero_plan_is_noop():
    m = frictionless()
    u = acct([10, 0], [0, 9])
    after = apply_plan(u, LiquidationPlan(0, 0, 1, 0.0, 0.0, 0.0, 0.0, 0.0), ONES, m)
    np.testing.assert_array_equal(after.collateral_units, u.collateral_units)
    np.testing.assert_array_equal(after.loan_units, u.loan_units)


def test_apply_plan_rejects_stale_plan():
    m = frictionless()
    u = acct([1000, 0], [0, 900])
    plan = best_plan(u, ONES, m, trading_fee=0.0)
    with pytest.raises(StalePlanError):
        apply_plan(u, plan, [0.4, 1.0], m)  # collateral crashed below the seize amount
    with pytest.raises(StalePlanError):
        apply_plan(u, plan, [1.0, 0.5], m)  # loan shrank below the close-factor cap


def test_apply_plan_full_seizure_zeroes_collateral():
    m = frictionless(0.05)
    u = acct([100, 0], [0, 500])
    plan = best_plan(u, ONES, m, trading_fee=0.0)
    assert plan.seize_amount == pytest.approx(100)
    after = apply_plan(u, plan, ONES, m)
    assert after.collateral_units[0] == 0.0


def test_tick_calm_and_independent_users():
    m = pair_market()
    calm = Book.from_accounts([acct([100, 0], [0, 50])] * 3)
    _, plans = liquidation_tick(calm, ONES, m)
    assert plans == []
    a, b = acct([100, 0], [0, 85]), acct([300, 0], [0, 270])
    book, plans = liquidation_tick(Book.from_accounts([a, b]), ONES, m)
    assert [pl.user_id for pl in plans] == [0, 1]
    for u, one in enumerate((a, b)):
        alone, solo = liquidation_tick(Book.from_accounts([one]), ONES, m)
        assert solo[0].seize_amount == plans[u].seize_amount
        np.testing.assert_array_equal(alone.collateral[0], book.collateral[u])


def test_repeat_within_tick_reaches_health():
    m = pair_market(close_factor=0.2)
    book = Book.from_accounts([acct([100, 0], [0, 90])])
    once, p1 = liquidation_tick(book, ONES, m)
    many, pn = liquidation_tick(book, ONES, m, repeat_within_tick=True)
    assert len(p1) == 1 and len(pn) > 1
    assert find_liquidatable(many, ONES, m).size == 0
    assert find_liquidatable(once, ONES, m).size == 1


# -- randomized invariants ---------------------------------------------------

def random_book(rng, n, n_assets=3, ltv_lo=0.5, ltv_hi=1.2):
    c = rng.random((n, n_assets)) * (rng.random((n, n_assets)) < 0.7)
    l = rng.random((n, n_assets)) * (rng.random((n, n_assets)) < 0.7)
    m = np.minimum(c, l)
    c, l = c - m, l - m
    c[c.sum(1) == 0, 0] = 1.0
    l[l.sum(1) == 0, n_assets - 1] = 1.0
    target = rng.uniform(ltv_lo, ltv_hi, n)
    l = l * (target * c.sum(1) / l.sum(1))[:, None]
    size = np.exp(rng.normal(8, 1.5, n))
    return Book(c * size[:, None], l * size[:, None])


def random_market(rng, n_assets=3):
    incs = rng.uniform(0.0, 0.15, n_assets)
    vol = np.exp(rng.uniform(np.log(1e3), np.log(1e7), (n_assets, n_assets)))
    from lendsim.core import AssetParams, Market, PairLiquidity
    assets = tuple(AssetParams(f"A{k}", 0.7, float(rng.uniform(0.72, 0.9)), float(rng.uniform(0.2, 1.0)),
                               float(incs[k])) for k in range(n_assets))
    return Market(assets, PairLiquidity(vol))


def test_vectorised_plans_equal_scalar_reference():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m = random_market(rng)
        book = random_book(rng, 50)
        p = rng.uniform(0.5, 2.0, 3)
        cv, lv = book.values(p)
        batch = best_plans(cv, lv, m, 0.003)
        for u, a in enumerate(book.accounts()):
            ref = best_plan(a, p, m, 0.003)
            assert batch.valid[u] == (ref is not None)
            if ref is not None:
                assert (batch.collateral_asset[u], batch.loan_asset[u]) == (ref.collateral_asset, ref.loan_asset)
                assert batch.seize[u] == pytest.approx(ref.seize_amount, rel=1e-12)
                assert batch.repay[u] == pytest.approx(ref.repaid_amount, rel=1e-12)
                assert batch.profit[u] == pytest.approx(ref.profit, rel=1e-12)


def test_executed_plans_obey_constraints_and_conserve_value():
    rng = np.random.default_rng(8)
    for _ in range(20):
        m = random_market(rng)
        book = random_book(rng, 80)
        p = rng.uniform(0.5, 2.0, 3)
        new, plans = liquidation_tick(book, p, m, 0.003)
        cv0, lv0 = book.values(p)
        cv1, lv1 = new.values(p)
        for pl in plans:
            u, j, i = pl.user_id, pl.collateral_asset, pl.loan_asset
            assert pl.profit > 0
            assert pl.repaid_amount <= m.close_factor[i] * lv0[u, i] * (1 + 1e-9)
            assert pl.seize_amount <= cv0[u, j] * (1 + 1e-12)
            assert cv0[u, j] - cv1[u, j] == pytest.approx(pl.seize_amount, rel=1e-9, abs=1e-9)
            assert lv0[u, i] - lv1[u, i] == pytest.approx(pl.repaid_amount, rel=1e-9, abs=1e-9)
            assert pl.seize_amount - pl.repaid_amount == pytest.approx(
                pl.profit + pl.slippage_fee + 2 * pl.trading_fee, rel=1e-9)
        touched = {pl.user_id for pl in plans}
        untouched = [u for u in range(book.n_users) if u not in touched]
        np.testing.assert_array_equal(new.collateral[untouched], book.collateral[untouched])


@settings(max_examples=300, deadline=None)
@given(ltv=st.floats(0.5, 1.3), x=st.floats(0.01, 0.3), size=st.floats(10, 1e7), close=st.floats(0.1, 1.0))
def test_ltv_dichotomy_with_constant_fee(ltv, x, size, close):
    if abs(ltv - (1 - x)) < 0.005:
        return
    m = frictionless(x, liq_ltv=0.45, max_ltv=0.4, close_factor=close)
    u = acct([size, 0], [0, ltv * size])
    plan = best_plan(u, ONES, m, trading_fee=0.0)
    after = user_ltv(apply_plan(u, plan, ONES, m), ONES)
    assert (after < ltv) if ltv < 1 - x else (after > ltv)


def test_event_driven_path_matches_tick_by_tick_loop():
    rng = np.random.default_rng(21)
    for repeat in (False, True):
        m = random_market(rng)
        book = random_book(rng, 40, ltv_lo=0.4, ltv_hi=0.85)
        steps = rng.normal(0, 0.003, (3, 1439))
        prices = np.exp(np.concatenate([np.zeros((3, 1)), np.cumsum(steps, axis=1)], axis=1))
        fast = simulate_path(book, prices, m, 0.003, repeat_within_tick=repeat, record_plans=True)
        slow = simulate_path_reference(book, prices, m, 0.003, repeat_within_tick=repeat)
        assert fast.events.sum() > 0
        np.testing.assert_array_equal(fast.events, slow.events)
        np.testing.assert_allclose(fast.seized, slow.seized, rtol=1e-12)
        np.testing.assert_allclose(fast.collateral_value, slow.collateral_value, rtol=1e-12, atol=1e-9)
        np.testing.assert_allclose(fast.loan_value, slow.loan_value, rtol=1e-12, atol=1e-9)
        assert [(pl.tick, pl.user_id) for pl in fast.plans] == [(pl.tick, pl.user_id) for pl in slow.plans]


def test_simulation_is_deterministic():
    rng = np.random.default_rng(2)
    m = random_market(rng)
    book = random_book(rng, 30, ltv_lo=0.6, ltv_hi=0.85)
    prices = np.exp(np.cumsum(rng.normal(0, 0.004, (3, 1440)), axis=1))
    a = simulate_path(book, prices, m, record_plans=True)
    b = simulate_path(book, prices, m, record_plans=True)
    assert a.plans == b.plans
    np.testing.assert_array_equal(a.loan_value, b.loan_value)
