"""Scenario configuration files.

Configs are TOML or JSON documents validated against :data:`SCHEMA` (unknown
keys are rejected). :func:`config_to_dict` produces the fully resolved form
written into every result bundle; loading that echo reproduces the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .core import AssetParams, Market, PairLiquidity
from .errors import ConfigError, LendsimError
from .harness import PRICE_SOURCES, ScenarioConfig
from .population import PopulationConfig

_num = {"type": "number"}
_frac = {"type": "number", "minimum": 0, "maximum": 1}
_names = {"type": "array", "items": {"type": "string"}, "minItems": 1}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "masterSeed": {"type": "integer", "minimum": 0},
        "nRuns": {"type": "integer", "minimum": 1},
        "nUsers": {"type": "integer", "minimum": 1},
        "tradingFee": _frac,
        "priceSource": {"enum": list(PRICE_SOURCES)},
        "volMultiplier": {"type": ["number", "null"], "minimum": 0},
        "volTargets": {"type": ["object", "null"], "additionalProperties": {"type": "number", "minimum": 0}},
        "historyPath": {"type": ["string", "null"]},
        "replayDate": {"type": ["string", "null"], "pattern": r"^\d{4}-\d{2}-\d{2}$"},
        "worstDrawdownAsset": {"type": ["string", "null"]},
        "ltvThresholdDenominator": {"enum": ["collateral", "netPortfolio"]},
        "repeatWithinTick": {"type": "boolean"},
        "liquidityDepletion": {"type": "boolean"},
        "correlation": {"type": ["array", "null"], "items": {"type": "array", "items": _num}},
        "assets": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["symbol"],
                "properties": {
                    "symbol": {"type": "string", "minLength": 1},
                    "maxLtv": _frac,
                    "liqLtv": _frac,
                    "closeFactor": _frac,
                    "liquidationIncentive": _frac,
                    "isNumerairePegged": {"type": "boolean"},
                    "hourlyVol": {"type": "number", "minimum": 0},
                    "initialPrice": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "liquidity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "slippageCoefficient": {"type": "number", "minimum": 0},
                "slippageExponent": {"type": "number", "exclusiveMinimum": 0},
                "defaultVolume": {"type": "number", "exclusiveMinimum": 0},
                "volumeScale": {"type": "number", "exclusiveMinimum": 0},
                "pairVolumes": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["from", "to", "volume"],
                        "properties": {
                            "from": {"type": "string"},
                            "to": {"type": "string"},
                            "volume": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                },
            },
        },
        "population": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "meanPortfolio": {"type": "number", "exclusiveMinimum": 0},
                "portfolioLogStd": {"type": "number", "minimum": 0},
                "meanLtv": _frac,
                "ltvLogStd": {"type": "number", "minimum": 0},
                "minLtv": _frac,
                "collateralAssets": {"anyOf": [_names, {"type": "null"}]},
                "loanAssets": {"anyOf": [_names, {"type": "null"}]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "liqLtvGrid": {"type": "array", "items": _frac, "minItems": 1},
                "incGrid": {"type": "array", "items": _frac, "minItems": 1},
                "threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "maxLtvGap": _frac,
            },
        },
    },
}

# Four-asset desk defaults; vols are hourly.
DEFAULT_ASSETS = [
    {"symbol": "ETH", "hourlyVol": 0.008, "initialPrice": 2000.0},
    {"symbol": "BTC", "hourlyVol": 0.006, "initialPrice": 30000.0},
    {"symbol": "MATIC", "hourlyVol": 0.012, "initialPrice": 1.0},
    {"symbol": "USDC", "isNumerairePegged": True, "hourlyVol": 0.0, "initialPrice": 1.0},
]
ASSET_DEFAULTS = {"maxLtv": 0.75, "liqLtv": 0.8, "closeFactor": 0.5, "liquidationIncentive": 0.08,
                  "isNumerairePegged": False, "hourlyVol": 0.0, "initialPrice": 1.0}
DEFAULT_SWEEP = {
    "liqLtvGrid": [round(0.5 + 0.05 * k, 2) for k in range(10)],
    "incGrid": [round(0.01 + 0.02 * k, 2) for k in range(25)],
    "threshold": 0.01,
    "maxLtvGap": 0.05,
}
MATIC_PAIR_VOLUME = 1e8
DEFAULT_VOLUME = 1e9


@dataclass(frozen=True)
class SweepSpec:
    liq_ltv_grid: tuple[float, ...] = tuple(DEFAULT_SWEEP["liqLtvGrid"])
    inc_grid: tuple[float, ...] = tuple(DEFAULT_SWEEP["incGrid"])
    threshold: float = DEFAULT_SWEEP["threshold"]
    max_ltv_gap: float = DEFAULT_SWEEP["maxLtvGap"]


@dataclass(frozen=True, eq=False)
class LoadedConfig:
    scenario: ScenarioConfig
    sweep: SweepSpec = field(default_factory=SweepSpec)


def read_document(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix == ".json":
            return json.loads(path.read_text())
        return tomllib.loads(path.read_text())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def validate(doc: dict) -> None:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        lines = [f"  {'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("config failed schema validation:\n" + "\n".join(lines))


def _volumes(symbols: list[str], liq: dict) -> np.ndarray:
    n = len(symbols)
    vol = np.full((n, n), float(liq.get("defaultVolume", DEFAULT_VOLUME)))
    pairs = liq.get("pairVolumes")
    if pairs is None:
        pairs = [{"from": a, "to": b, "volume": MATIC_PAIR_VOLUME}
                 for a in symbols for b in symbols if a != b and "MATIC" in (a, b)]
    for entry in pairs:
        for key in ("from", "to"):
            if entry[key] not in symbols:
                raise ConfigError(f"liquidity.pairVolumes references unknown asset {entry[key]!r}")
        vol[symbols.index(entry["from"]), symbols.index(entry["to"])] = float(entry["volume"])
    return vol * float(liq.get("volumeScale", 1.0))


def from_dict(doc: dict) -> LoadedConfig:
    validate(doc)
    try:
        raw_assets = [{**ASSET_DEFAULTS, **a} for a in doc.get("assets", DEFAULT_ASSETS)]
        symbols = [a["symbol"] for a in raw_assets]
        assets = tuple(
            AssetParams(a["symbol"], a["maxLtv"], a["liqLtv"], a["closeFactor"],
                        a["liquidationIncentive"], a["isNumerairePegged"])
            for a in raw_assets
        )
        liq = doc.get("liquidity", {})
        liquidity = PairLiquidity(_volumes(symbols, liq), float(liq.get("slippageCoefficient", 1.0)),
                                  float(liq.get("slippageExponent", 1.0)))
        p = doc.get("population", {})
        pop = PopulationConfig(
            n_users=doc.get("nUsers", 200),
            mean_portfolio=p.get("meanPortfolio", 5000.0),
            portfolio_log_std=p.get("portfolioLogStd", 1.0),
            mean_ltv=p.get("meanLtv", 0.6),
            ltv_log_std=p.get("ltvLogStd", 0.25),
            min_ltv=p.get("minLtv", 0.45),
            collateral_assets=tuple(p["collateralAssets"]) if p.get("collateralAssets") else None,
            loan_assets=tuple(p["loanAssets"]) if p.get("loanAssets") else None,
        )
        corr = doc.get("correlation")
        scenario = ScenarioConfig(
            market=Market(assets, liquidity),
            population=pop,
            price_source=doc.get("priceSource", "synthetic"),
            hourly_vols={a["symbol"]: float(a["hourlyVol"]) for a in raw_assets},
            initial_prices={a["symbol"]: float(a["initialPrice"]) for a in raw_assets},
            correlation=None if corr is None else tuple(tuple(float(x) for x in row) for row in corr),
            vol_multiplier=doc.get("volMultiplier"),
            vol_targets=doc.get("volTargets"),
            n_runs=doc.get("nRuns", 50),
            master_seed=doc.get("masterSeed", 0),
            trading_fee=doc.get("tradingFee", 0.003),
            history_path=doc.get("historyPath"),
            replay_date=doc.get("replayDate"),
            worst_drawdown_asset=doc.get("worstDrawdownAsset"),
            ltv_threshold_denominator=doc.get("ltvThresholdDenominator", "collateral"),
            repeat_within_tick=doc.get("repeatWithinTick", False),
            liquidity_depletion=doc.get("liquidityDepletion", False),
        )
        s = {**DEFAULT_SWEEP, **doc.get("sweep", {})}
        sweep = SweepSpec(tuple(s["liqLtvGrid"]), tuple(s["incGrid"]), s["threshold"], s["maxLtvGap"])
    except ConfigError:
        raise
    except LendsimError as exc:
        raise ConfigError(str(exc)) from None
    return LoadedConfig(scenario, sweep)


def load_config(path) -> LoadedConfig:
    cfg = from_dict(read_document(path))
    hp = cfg.scenario.history_path
    if hp and not Path(hp).is_absolute():
        # relative history paths resolve against the config's directory
        resolved = (Path(path).parent / hp).resolve()
        cfg = LoadedConfig(cfg.scenario.replace(history_path=str(resolved)), cfg.sweep)
    return cfg


def config_to_dict(scenario: ScenarioConfig, sweep: SweepSpec | None = None) -> dict:
    """Fully resolved document; ``from_dict(config_to_dict(s))`` rebuilds ``s``."""
    m = scenario.market
    symbols = list(m.symbols)
    pop = scenario.population
    liq = m.liquidity
    pairs = [{"from": a, "to": b, "volume": float(liq.volumes[j, i])}
             for j, a in enumerate(symbols) for i, b in enumerate(symbols) if i != j]
    doc = {
        "masterSeed": int(scenario.master_seed),
        "nRuns": int(scenario.n_runs),
        "nUsers": int(pop.n_users),
        "tradingFee": float(scenario.trading_fee),
        "priceSource": scenario.price_source,
        "volMultiplier": scenario.vol_multiplier,
        "volTargets": dict(scenario.vol_targets) if scenario.vol_targets else None,
        "historyPath": scenario.history_path,
        "replayDate": scenario.replay_date,
        "worstDrawdownAsset": scenario.worst_drawdown_asset,
        "ltvThresholdDenominator": scenario.ltv_threshold_denominator,
        "repeatWithinTick": bool(scenario.repeat_within_tick),
        "liquidityDepletion": bool(scenario.liquidity_depletion),
        "correlation": None if scenario.correlation is None else [list(r) for r in scenario.correlation],
        "assets": [
            {"symbol": a.symbol, "maxLtv": a.max_ltv, "liqLtv": a.liq_ltv, "closeFactor": a.close_factor,
             "liquidationIncentive": a.liquidation_incentive, "isNumerairePegged": a.is_numeraire_pegged,
             "hourlyVol": float(scenario.hourly_vols.get(a.symbol, 0.0)),
             "initialPrice": float(scenario.initial_prices.get(a.symbol, 1.0))}
            for a in m.assets
        ],
        "liquidity": {"slippageCoefficient": liq.coefficient, "slippageExponent": liq.exponent,
                      "defaultVolume": DEFAULT_VOLUME, "volumeScale": 1.0, "pairVolumes": pairs},
        "population": {
            "meanPortfolio": pop.mean_portfolio, "portfolioLogStd": pop.portfolio_log_std,
            "meanLtv": pop.mean_ltv, "ltvLogStd": pop.ltv_log_std, "minLtv": pop.min_ltv,
            "collateralAssets": list(pop.collateral_assets) if pop.collateral_assets else None,
            "loanAssets": list(pop.loan_assets) if pop.loan_assets else None,
        },
    }
    if sweep is not None:
        doc["sweep"] = {"liqLtvGrid": list(sweep.liq_ltv_grid), "incGrid": list(sweep.inc_grid),
                        "threshold": sweep.threshold, "maxLtvGap": sweep.max_ltv_gap}
    return doc
