import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lendsim.core import AssetParams, Market, PairLiquidity  # noqa: E402


def pair_market(incentive=0.05, volume=1e8, coefficient=1.0, exponent=1.0, liq_ltv=0.8, max_ltv=0.75,
                close_factor=0.5, n=2, incentives=None):
    """n-asset market with uniform protocol parameters and one volume for every pair."""
    incs = incentives if incentives is not None else [incentive] * n
    assets = tuple(AssetParams(f"A{k}", max_ltv, liq_ltv, close_factor, incs[k]) for k in range(n))
    return Market(assets, PairLiquidity(np.full((n, n), float(volume)), coefficient, exponent))


@pytest.fixture
def market2():
    return pair_market()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
