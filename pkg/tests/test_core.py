import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import pair_market
from lendsim.core import (
    AssetParams,
    Book,
    Market,
    PairLiquidity,
    UserAccount,
    is_frozen,
    is_liquidatable,
    is_undercollateralized,
    ltv_from_sums,
    mark_to_market,
    portfolio_value,
    user_liq_ltv,
    user_ltv,
    user_max_ltv,
    weighted_threshold,
)
from lendsim.errors import InvalidInputError

ONES = np.ones(2)


def acct(c, l):
    return UserAccount(np.array(c, float), np.array(l, float))


def two_asset(liq=(0.8, 0.9), maxl=(0.75, 0.85)):
    assets = (AssetParams("X", maxl[0], liq[0]), AssetParams("Y", maxl[1], liq[1]))
    return Market(assets, PairLiquidity(np.full((2, 2), 1e8)))


def test_mark_to_market_examples():
    c, l = mark_to_market(acct([10, 0], [0, 0]), [100, 1])
    assert c.tolist() == [1000, 0] and l.tolist() == [0, 0]
    c, l = mark_to_market(acct([0, 0], [0, 0]), [3, 4])
    assert not c.any() and not l.any()
    u = acct([1.5, 2], [0.5, 0.25])
    c1, l1 = mark_to_market(u, [3, 7])
    c2, l2 = mark_to_market(u, [6, 14])
    np.testing.assert_array_equal(c2, 2 * c1)
    np.testing.assert_array_equal(l2, 2 * l1)


@pytest.mark.parametrize("bad", [[0, 1], [-1, 1], [np.nan, 1], [np.inf, 1]])
def test_bad_prices_rejected(bad):
    with pytest.raises(InvalidInputError):
        mark_to_market(acct([1, 1], [0, 0]), bad)


def test_portfolio_value_examples():
    assert portfolio_value(acct([100, 50], [60, 0]), ONES) == 90
    assert portfolio_value(acct([3, 4], [3, 4]), ONES) == 0
    # rescaled account from the population example
    assert portfolio_value(acct([12500, 0], [0, 7500]), ONES) == 5000


def test_user_ltv_examples():
    assert user_ltv(acct([100, 50], [60, 0]), ONES) == pytest.approx(0.4)
    assert user_ltv(acct([100, 50], [0, 0]), ONES) == 0.0
    assert user_ltv(acct([0, 0], [0, 5]), ONES) == np.inf
    assert user_ltv(acct([0, 0], [0, 0]), ONES) == 0.0


def test_ltv_after_liquidation_with_8pct_fee_drops():
    # constant total fee x = 0.08, pre-LTV 0.9 < 1 - x
    c, l, x, a = 1000.0, 900.0, 0.08, 200.0
    post = (l - (1 - x) * a) / (c - a)
    assert post < 0.9
    assert ltv_from_sums(c - a, l - (1 - x) * a) == pytest.approx(post)


def test_weighted_threshold_examples():
    m = two_asset()
    assert user_liq_ltv(acct([1, 0], [0, 1]), ONES, m) == pytest.approx(0.8)
    assert user_liq_ltv(acct([100, 100], [0, 1]), ONES, m) == pytest.approx(0.85)
    assert user_max_ltv(acct([100, 100], [0, 1]), ONES, m) == pytest.approx(0.8)


def test_net_portfolio_denominator_is_literal_form():
    cv = np.array([100.0, 100.0])
    w = np.array([0.8, 0.9])
    assert weighted_threshold(cv, w, 50.0, "netPortfolio") == pytest.approx(170.0 / 150.0)
    with pytest.raises(InvalidInputError):
        weighted_threshold(cv, w, 50.0, "bogus")


def test_liquidatable_is_strict():
    m = pair_market(liq_ltv=0.85)
    assert not is_liquidatable(acct([100, 0], [0, 70]), ONES, m)
    assert not is_liquidatable(acct([100, 0], [0, 85]), ONES, m)
    assert is_liquidatable(acct([100, 0], [0, 86]), ONES, m)


def test_frozen_and_undercollateralized():
    m = pair_market()
    frozen = acct([0, 0], [0, 5])
    assert is_frozen(frozen, ONES) and not is_liquidatable(frozen, ONES, m)
    assert is_undercollateralized(frozen, ONES)
    assert is_undercollateralized(acct([1, 0], [0, 1]), ONES)
    assert not is_undercollateralized(acct([0, 0], [0, 0]), ONES)


def test_asset_params_invariants():
    with pytest.raises(InvalidInputError):
        AssetParams("X", 0.9, 0.8)
    with pytest.raises(InvalidInputError):
        AssetParams("X", 0.5, 0.8, close_factor=0.0)
    with pytest.raises(InvalidInputError):
        AssetParams("X", 0.5, 0.8, liquidation_incentive=1.0)


def test_pair_liquidity_invariants():
    with pytest.raises(InvalidInputError):
        PairLiquidity(np.array([[1.0, 0.0], [1.0, 1.0]]))
    lq = PairLiquidity(np.array([[0.0, 4.0], [2.0, 0.0]]), coefficient=2.0)
    assert lq.s_tilde(0, 1) == 0.5
    assert lq.scaled(10).volume(1, 0) == 20.0


def test_book_matches_scalar_helpers():
    rng = np.random.default_rng(3)
    book = Book(rng.random((20, 3)), rng.random((20, 3)))
    p = rng.random(3) + 0.5
    for u, a in enumerate(book.accounts()):
        assert book.ltv(p)[u] == pytest.approx(user_ltv(a, p), rel=1e-14)
        assert book.portfolio(p)[u] == pytest.approx(portfolio_value(a, p), rel=1e-12, abs=1e-12)


units = st.lists(st.floats(0.0, 1e6), min_size=3, max_size=3)
prices = st.lists(st.floats(1e-3, 1e4), min_size=3, max_size=3)


@settings(max_examples=200, deadline=None)
@given(c=units, l=units, p=prices, lam=st.floats(1e-3, 1e3))
def test_ltv_homogeneous_in_units(c, l, p, lam):
    a = acct(c, l)
    b = acct(np.array(c) * lam, np.array(l) * lam)
    assert user_ltv(b, p) == pytest.approx(user_ltv(a, p), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(c0=st.floats(1e-3, 1e6), l1=st.floats(1e-3, 1e6), p0=st.floats(1e-2, 1e3), f=st.floats(0.01, 0.999))
def test_ltv_rises_when_collateral_price_falls(c0, l1, p0, f):
    a = acct([c0, 0], [0, l1])
    assert user_ltv(a, [p0 * f, 1]) > user_ltv(a, [p0, 1])


@settings(max_examples=200, deadline=None)
@given(c=units, l=units, p=prices)
def test_max_threshold_never_exceeds_liq_threshold(c, l, p):
    assets = (AssetParams("A", 0.5, 0.6), AssetParams("B", 0.7, 0.9), AssetParams("C", 0.0, 0.3))
    m = Market(assets, PairLiquidity(np.full((3, 3), 1e8)))
    a = acct(c, l)
    assert user_max_ltv(a, p, m) <= user_liq_ltv(a, p, m) + 1e-15
