import json
from pathlib import Path

import numpy as np
import pytest

from lendsim.cli import main
from lendsim.config import config_to_dict, from_dict, load_config
from lendsim.errors import ConfigError
from lendsim.harness import run_once

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = json.loads((Path(__file__).parent / "golden" / "bundle_headers.json").read_text())

TINY = """
masterSeed = 5
nRuns = 3
nUsers = 25

[[assets]]
symbol = "MATIC"
hourlyVol = 0.05

[[assets]]
symbol = "USDC"
isNumerairePegged = true

[population]
collateralAssets = ["MATIC"]
loanAssets = ["USDC"]
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


def header(path):
    return Path(path).read_text().splitlines()[0]


@pytest.mark.parametrize("name", ["matic_usdc.toml", "multi_asset.toml", "frontier.toml"])
def test_shipped_configs_load(name):
    cfg = load_config(ROOT / "configs" / name)
    assert cfg.scenario.n_users == 200


def test_defaults_match_documented_values():
    s = from_dict({}).scenario
    assert s.symbols == ("ETH", "BTC", "MATIC", "USDC")
    assert s.pegged == {"USDC"}
    m = s.market
    assert np.all(m.close_factor == 0.5)
    k = m.index("MATIC")
    assert m.liquidity.volumes[k, 0] == 1e8 and m.liquidity.volumes[0, 1] == 1e9
    assert s.population.mean_portfolio == 5000 and s.population.min_ltv == 0.45


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"assets": [{"symbol": "A", "color": "red"}, {"symbol": "B"}]},
    {"nRuns": 0},
    {"assets": [{"symbol": "A", "maxLtv": 0.9, "liqLtv": 0.8}, {"symbol": "B"}]},
    {"population": {"collateralAssets": ["DOGE"]}},
    {"liquidity": {"pairVolumes": [{"from": "ETH", "to": "XYZ", "volume": 1}]}},
])
def test_invalid_configs_rejected(doc):
    with pytest.raises(ConfigError):
        from_dict(doc)


def test_echo_reingests_to_identical_run(tiny):
    cfg = load_config(tiny)
    echo = config_to_dict(cfg.scenario, cfg.sweep)
    again = from_dict(json.loads(json.dumps(echo)))
    assert config_to_dict(again.scenario, again.sweep) == echo
    a, b = run_once(cfg.scenario, 1), run_once(again.scenario, 1)
    assert a.final == b.final


def test_simulate_bundle_schema_and_echo(tiny, tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(tiny), "--threads", "1", "--out", str(out)]) == 0
    for rel, head in GOLDEN["simulate"].items():
        assert header(out / rel) == head, rel
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 5 and summary["completedRuns"] == 3
    # the echoed config reruns to the same CSV bodies
    echo = tmp_path / "echo.json"
    echo.write_text((out / "config.json").read_text())
    out2 = tmp_path / "sim2"
    assert main(["simulate", "--config", str(echo), "--threads", "1", "--out", str(out2)]) == 0
    for rel in GOLDEN["simulate"]:
        assert (out / rel).read_bytes() == (out2 / rel).read_bytes()


def test_seed_and_vol_flags_change_output(tiny, tmp_path):
    main(["simulate", "--config", str(tiny), "--threads", "1", "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(tiny), "--threads", "1", "--seed", "6", "--out", str(tmp_path / "b")])
    main(["simulate", "--config", str(tiny), "--threads", "1", "--vol-multiplier", "3", "--out", str(tmp_path / "c")])
    runs = [(tmp_path / d / "runs.csv").read_bytes() for d in "abc"]
    assert runs[0] != runs[1] and runs[0] != runs[2]
    assert json.loads((tmp_path / "c" / "config.json").read_text())["volMultiplier"] == 3.0


def test_sweep_single_cell(tiny, tmp_path):
    out = tmp_path / "sw"
    rc = main(["sweep", "--config", str(tiny), "--threads", "1", "--liq-ltv-grid", "0.8",
               "--inc-grid", "0.3:0.3:0.1", "--threshold", "0.001", "--out", str(out)])
    assert rc == 0
    for rel, head in GOLDEN["sweep"].items():
        assert header(out / rel) == head
    rows = (out / "surface.csv").read_text().splitlines()[1:]
    assert len(rows) == 1 and rows[0].startswith("0.8,0.3,")


def test_sweep_rejects_bad_threshold(tiny, tmp_path):
    assert main(["sweep", "--config", str(tiny), "--threshold", "0", "--out", str(tmp_path / "x")]) == 2


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("unknownKey = 3\n")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "unknownKey" in capsys.readouterr().err


def test_replay_requires_history(tiny, tmp_path, capsys):
    assert main(["replay", "--config", str(tiny), "--date", "2020-02-20", "--out", str(tmp_path / "r")]) == 2
    assert "historyPath" in capsys.readouterr().err


def test_replay_missing_file_exit_code(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(TINY.replace("nUsers = 25", 'nUsers = 25\nhistoryPath = "missing.csv"'))
    assert main(["replay", "--config", str(p), "--date", "2020-02-20", "--out", str(tmp_path / "r")]) == 2


def test_generated_history_feeds_replay(tiny, tmp_path):
    hist = tmp_path / "history.csv"
    assert main(["gen-prices", "--config", str(tiny), "--history-days", "3", "--start", "2020-02-19",
                 "--out", str(hist)]) == 0
    assert header(hist) == GOLDEN["gen-prices-history"]
    cfg = tmp_path / "replay.toml"
    cfg.write_text(TINY.replace("nUsers = 25", 'nUsers = 25\nhistoryPath = "history.csv"'))
    out = tmp_path / "r"
    assert main(["replay", "--config", str(cfg), "--date", "2020-02-20", "--threads", "1", "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["windowStart"].startswith("2020-02-20T00:00:00")
    assert main(["replay", "--config", str(cfg), "--date", "2021-01-01", "--out", str(out)]) == 2
    assert main(["replay", "--config", str(cfg), "--worst-drawdown", "MATIC", "--threads", "1",
                 "--out", str(tmp_path / "w")]) == 0


def test_gen_population_and_prices(tiny, tmp_path):
    pop = tmp_path / "pop.csv"
    assert main(["gen-population", "--config", str(tiny), "--run-index", "2", "--out", str(pop)]) == 0
    assert header(pop) == GOLDEN["gen-population"]
    assert len(pop.read_text().splitlines()) == 1 + 25 * 2
    grid = tmp_path / "grid.csv"
    assert main(["gen-prices", "--config", str(tiny), "--out", str(grid)]) == 0
    assert header(grid) == GOLDEN["gen-prices"]
    assert len(grid.read_text().splitlines()) == 1 + 1440 * 2


def test_population_matches_run(tiny, tmp_path):
    from lendsim.harness import build_grid, run_streams
    from lendsim.population import generate_population, load_population
    pop = tmp_path / "pop.csv"
    main(["gen-population", "--config", str(tiny), "--run-index", "1", "--out", str(pop)])
    s = load_config(tiny).scenario
    rng, prng = run_streams(s.master_seed, 1)
    prices = build_grid(s, prng).prices
    book = generate_population(s.population, s.market, prices[:, 0], rng)
    np.testing.assert_array_equal(load_population(pop, s.symbols).collateral, book.collateral)
