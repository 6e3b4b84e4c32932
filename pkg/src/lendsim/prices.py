"""Per-minute multi-asset price grids.

Grids come from three places: a uniformly sampled common window of minute
history, a pinned historical day (by date or worst drawdown), or a correlated
log-normal generator. Any grid can then be rescaled so each asset's realized
hourly volatility (std of minute log-returns times sqrt(60)) hits a target.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d

from .errors import (
    CannotRescaleError,
    HistoryFormatError,
    InsufficientDataError,
    InvalidInputError,
    MissingAssetError,
)

MINUTES_PER_DAY = 1440
MAX_FILL_GAP = 5
HISTORY_HEADER = ["timestamp", "asset", "price"]


@dataclass(frozen=True, eq=False)
class PriceGrid:
    assets: tuple[str, ...]
    prices: np.ndarray  # (assets, minutes)
    start: int | None = None  # epoch seconds of minute 0, when known
    pegged: frozenset[str] = frozenset()

    def __post_init__(self):
        p = np.array(self.prices, dtype=float)
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "pegged", frozenset(self.pegged))
        if p.shape != (len(self.assets), MINUTES_PER_DAY):
            raise InvalidInputError(f"grid must be (assets, {MINUTES_PER_DAY}), got {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise InvalidInputError("grid prices must be finite and > 0")
        for k, a in enumerate(self.assets):
            if a in self.pegged and not np.all(p[k] == 1.0):
                raise InvalidInputError(f"pegged asset {a} must be constant at 1")
        p.setflags(write=False)
        object.__setattr__(self, "prices", p)

    def series(self, asset: str) -> np.ndarray:
        return self.prices[self.assets.index(asset)]

    def timestamps(self) -> np.ndarray:
        base = 0 if self.start is None else self.start
        return base + 60 * np.arange(MINUTES_PER_DAY)

    def reorder(self, assets: Sequence[str]) -> "PriceGrid":
        missing = [a for a in assets if a not in self.assets]
        if missing:
            raise MissingAssetError(f"grid lacks assets {missing}")
        idx = [self.assets.index(a) for a in assets]
        return PriceGrid(tuple(assets), self.prices[idx], self.start, self.pegged & set(assets))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["minute", "asset", "price"])
            for m in range(MINUTES_PER_DAY):
                for k, a in enumerate(self.assets):
                    w.writerow([m, a, repr(float(self.prices[k, m]))])


@dataclass
class Segment:
    start: int  # epoch minute
    prices: np.ndarray

    @property
    def end(self) -> int:
        return self.start + len(self.prices)


@dataclass
class History:
    segments: dict[str, list[Segment]]
    filled: list[tuple[str, int, int]] = field(default_factory=list)  # (asset, epoch minute, gap)

    @property
    def assets(self) -> tuple[str, ...]:
        return tuple(self.segments)

    def n_ticks(self, asset: str) -> int:
        return sum(len(s.prices) for s in self.segments[asset])


def _parse_rows(rows: Iterable[list[str]]):
    it = iter(rows)
    header = next(it, None)
    if header is None or [h.strip() for h in header] != HISTORY_HEADER:
        raise HistoryFormatError(1, f"header must be {','.join(HISTORY_HEADER)}")
    for lineno, row in enumerate(it, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise HistoryFormatError(lineno, f"expected 3 fields, got {len(row)}")
        try:
            ts = float(row[0])
            price = float(row[2])
        except ValueError:
            raise HistoryFormatError(lineno, f"cannot parse {row!r}") from None
        asset = row[1].strip()
        if not asset or not np.isfinite(ts) or not np.isfinite(price) or price <= 0:
            raise HistoryFormatError(lineno, f"invalid values {row!r}")
        yield lineno, int(ts // 60), asset, price


def load_history(path, assets: Sequence[str] | None = None) -> History:
    """Read a ``timestamp,asset,price`` CSV of UTC epoch seconds into minute segments.

    Gaps of up to five missing minutes are forward-filled (and listed in
    ``History.filled``); longer gaps start a new segment.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"price history not found: {path}")
    raw: dict[str, list[tuple[int, float]]] = {}
    last: dict[str, int] = {}
    with open(path, newline="") as fh:
        for lineno, minute, asset, price in _parse_rows(csv.reader(fh)):
            if asset in last and minute <= last[asset]:
                raise HistoryFormatError(lineno, f"{asset} timestamps must be strictly ascending by minute")
            last[asset] = minute
            raw.setdefault(asset, []).append((minute, price))
    wanted = list(raw) if assets is None else list(assets)
    missing = [a for a in wanted if not raw.get(a)]
    if missing:
        raise MissingAssetError(f"no price rows for {missing} in {path}")
    history = History({})
    for a in wanted:
        history.segments[a] = _build_segments(a, raw[a], history.filled)
    return history


def _build_segments(asset: str, rows: list[tuple[int, float]], filled: list) -> list[Segment]:
    minutes = np.array([r[0] for r in rows], dtype=np.int64)
    values = np.array([r[1] for r in rows])
    gaps = np.diff(minutes)
    breaks = np.flatnonzero(gaps > MAX_FILL_GAP + 1) + 1
    out = []
    for lo, hi in zip(np.r_[0, breaks], np.r_[breaks, len(rows)]):
        m, v = minutes[lo:hi], values[lo:hi]
        dense = np.empty(m[-1] - m[0] + 1)
        pos = m - m[0]
        # forward fill: each minute takes the last observed price
        idx = np.zeros(len(dense), dtype=np.int64)
        idx[pos] = np.arange(len(m))
        idx = np.maximum.accumulate(idx)
        dense[:] = v[idx]
        for g_at in np.flatnonzero(np.diff(m) > 1):
            filled.append((asset, int(m[g_at] + 1), int(m[g_at + 1] - m[g_at] - 1)))
        out.append(Segment(int(m[0]), dense))
    return out


def _common_intervals(history: History, assets: Sequence[str]) -> list[tuple[int, int]]:
    """Minute intervals ``[start, end)`` where every asset has dense data."""
    current = [(s.start, s.end) for s in history.segments[assets[0]]]
    for a in assets[1:]:
        other = [(s.start, s.end) for s in history.segments[a]]
        merged = []
        for s0, e0 in current:
            for s1, e1 in other:
                s, e = max(s0, s1), min(e0, e1)
                if e > s:
                    merged.append((s, e))
        current = merged
    return sorted(current)


def _history_assets(history: History, assets: Sequence[str] | None, pegged: Iterable[str]) -> tuple[list, list]:
    assets = list(history.assets if assets is None else assets)
    live = [a for a in assets if a not in set(pegged)]
    missing = [a for a in live if a not in history.segments]
    if missing:
        raise MissingAssetError(f"history lacks assets {missing}")
    if not live:
        raise InvalidInputError("need at least one non-pegged asset to sample history")
    return assets, live


def eligible_windows(history: History, assets: Sequence[str]) -> list[tuple[int, int]]:
    """``(first_start_minute, count)`` runs of valid day-window start minutes."""
    out = []
    for s, e in _common_intervals(history, list(assets)):
        n = e - s - MINUTES_PER_DAY + 1
        if n > 0:
            out.append((s, n))
    return out


def _window_grid(history: History, assets: Sequence[str], pegged: frozenset, start_minute: int) -> PriceGrid:
    rows = []
    for a in assets:
        if a in pegged:
            rows.append(np.ones(MINUTES_PER_DAY))
            continue
        for seg in history.segments[a]:
            if seg.start <= start_minute and start_minute + MINUTES_PER_DAY <= seg.end:
                off = start_minute - seg.start
                rows.append(seg.prices[off:off + MINUTES_PER_DAY])
                break
        else:
            raise InsufficientDataError(f"{a} has no data for window at minute {start_minute}")
    return PriceGrid(tuple(assets), np.array(rows), start_minute * 60, pegged)


def sample_window(history: History, rng: np.random.Generator, assets: Sequence[str] | None = None,
                  pegged: Iterable[str] = ()) -> PriceGrid:
    """One uniformly random day window shared by all assets."""
    pegged = frozenset(pegged)
    assets, live = _history_assets(history, assets, pegged)
    windows = eligible_windows(history, live)
    total = sum(n for _, n in windows)
    if total == 0:
        raise InsufficientDataError("no 1440-minute window where all assets have data")
    k = int(rng.integers(total))
    for s, n in windows:
        if k < n:
            return _window_grid(history, assets, pegged, s + k)
        k -= n
    raise AssertionError("unreachable")


def window_for_date(history: History, date: str | dt.date, assets: Sequence[str] | None = None,
                    pegged: Iterable[str] = ()) -> PriceGrid:
    """The UTC calendar day ``date`` as a grid."""
    pegged = frozenset(pegged)
    assets, live = _history_assets(history, assets, pegged)
    if isinstance(date, str):
        try:
            date = dt.date.fromisoformat(date)
        except ValueError:
            raise InvalidInputError(f"bad date {date!r}, expected YYYY-MM-DD") from None
    start = int(dt.datetime(date.year, date.month, date.day, tzinfo=dt.timezone.utc).timestamp()) // 60
    for s, n in eligible_windows(history, live):
        if s <= start < s + n:
            return _window_grid(history, assets, pegged, start)
    raise InsufficientDataError(f"history does not fully cover {date.isoformat()} for {live}")


def worst_drawdown_window(history: History, asset: str, assets: Sequence[str] | None = None,
                          pegged: Iterable[str] = ()) -> PriceGrid:
    """Day window with the lowest closing price relative to the window peak.

    Ties on that ratio go to the lowest close/open ratio, then the earliest start.
    """
    pegged = frozenset(pegged)
    assets, live = _history_assets(history, assets, pegged)
    if asset not in live:
        raise InvalidInputError(f"{asset} is not a non-pegged asset of this history")
    best_key, best_start = None, None
    for s, n in eligible_windows(history, live):
        seg = next(g for g in history.segments[asset] if g.start <= s and s + n - 1 + MINUTES_PER_DAY <= g.end)
        x = seg.prices[s - seg.start: s - seg.start + n - 1 + MINUTES_PER_DAY]
        # rolling max over [k, k+1440) placed at k
        peaks = maximum_filter1d(x, MINUTES_PER_DAY, origin=-(MINUTES_PER_DAY // 2))[:n]
        close = x[MINUTES_PER_DAY - 1:]
        open_ = x[:n]
        score = close / peaks
        rise = close / open_
        k = int(np.lexsort((np.arange(n), rise, score))[0])
        key = (score[k], rise[k], s + k)
        if best_key is None or key < best_key:
            best_key, best_start = key, s + k
    if best_start is None:
        raise InsufficientDataError("no 1440-minute window where all assets have data")
    return _window_grid(history, assets, pegged, best_start)


def realized_hourly_vol(series) -> float:
    """Population std of minute log-returns, scaled by sqrt(60)."""
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise InvalidInputError("need at least two ticks")
    r = np.diff(np.log(x))
    if np.all(r == r[0]):
        return 0.0
    return float(np.std(r) * np.sqrt(60.0))


def rescale_to_vol(grid: PriceGrid, targets: Mapping[str, float]) -> PriceGrid:
    """Scale each targeted asset's log-returns so its realized hourly vol equals the target.

    The first price of every series is kept; pegged and untargeted assets are untouched.
    """
    out = np.array(grid.prices)
    for a, target in targets.items():
        if a not in grid.assets:
            raise MissingAssetError(f"grid lacks asset {a}")
        if a in grid.pegged:
            continue
        if target < 0:
            raise InvalidInputError("target volatility must be >= 0")
        k = grid.assets.index(a)
        realized = realized_hourly_vol(out[k])
        if realized == 0:
            if target == 0:
                continue
            raise CannotRescaleError(f"{a} has zero realized volatility; cannot reach {target}")
        r = np.diff(np.log(out[k])) * (target / realized)
        out[k] = out[k, 0] * np.exp(np.concatenate(([0.0], np.cumsum(r))))
    return PriceGrid(grid.assets, out, grid.start, grid.pegged)


def scale_vol(grid: PriceGrid, multiplier: float, assets: Iterable[str] | None = None) -> PriceGrid:
    """Rescale every (or the listed) non-pegged asset to ``multiplier`` times its own realized vol."""
    names = [a for a in (grid.assets if assets is None else assets) if a not in grid.pegged]
    targets = {a: multiplier * realized_hourly_vol(grid.series(a)) for a in names}
    return rescale_to_vol(grid, targets)


def psd_factor(corr) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == corr`` for positive semi-definite ``corr``.

    Zero pivots give zero columns, so perfectly correlated assets get identical rows.
    """
    c = np.asarray(corr, dtype=float)
    n = c.shape[0]
    if c.shape != (n, n) or not np.allclose(c, c.T, atol=1e-12):
        raise InvalidInputError("correlation matrix must be square and symmetric")
    if not np.allclose(np.diag(c), 1.0):
        raise InvalidInputError("correlation matrix must have unit diagonal")
    if np.linalg.eigvalsh(c).min() < -1e-10:
        raise InvalidInputError("correlation matrix is not positive semi-definite")
    L = np.zeros_like(c)
    for j in range(n):
        d = c[j, j] - L[j, :j] @ L[j, :j]
        if d <= 1e-12:
            continue
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (c[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def synthetic_grid(assets: Sequence[str], vols: Mapping[str, float], rng: np.random.Generator,
                   correlation=None, initial_prices: Mapping[str, float] | None = None,
                   pegged: Iterable[str] = ()) -> PriceGrid:
    """Correlated geometric-Brownian day with the given hourly vols.

    ``correlation`` is over the non-pegged assets in ``assets`` order (identity if None).
    """
    pegged = frozenset(pegged)
    live = [a for a in assets if a not in pegged]
    sig = np.array([vols.get(a, 0.0) for a in live], dtype=float)
    if np.any(sig < 0):
        raise InvalidInputError("volatilities must be >= 0")
    corr = np.eye(len(live)) if correlation is None else np.asarray(correlation, dtype=float)
    if corr.shape != (len(live), len(live)):
        raise InvalidInputError(f"correlation must be {len(live)}x{len(live)} over {live}")
    L = psd_factor(corr)
    z = rng.standard_normal((len(live), MINUTES_PER_DAY - 1))
    logret = (sig / np.sqrt(60.0))[:, None] * (L @ z)
    paths = np.exp(np.concatenate([np.zeros((len(live), 1)), np.cumsum(logret, axis=1)], axis=1))
    init = initial_prices or {}
    rows, k = [], 0
    for a in assets:
        if a in pegged:
            rows.append(np.ones(MINUTES_PER_DAY))
        else:
            rows.append(float(init.get(a, 1.0)) * paths[k])
            k += 1
    return PriceGrid(tuple(assets), np.array(rows), None, pegged)


def write_history(path, assets: Sequence[str], prices: np.ndarray, start_seconds: int) -> None:
    """Write ``(assets, minutes)`` prices as a ``timestamp,asset,price`` CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for m in range(prices.shape[1]):
            ts = start_seconds + 60 * m
            for k, a in enumerate(assets):
                w.writerow([ts, a, repr(float(prices[k, m]))])


def synthetic_history(assets: Sequence[str], vols: Mapping[str, float], rng: np.random.Generator,
                      n_days: int, correlation=None, initial_prices=None) -> np.ndarray:
    """Several consecutive synthetic days as one ``(assets, n_days*1440)`` array."""
    sig = np.array([vols.get(a, 0.0) for a in assets], dtype=float)
    corr = np.eye(len(assets)) if correlation is None else np.asarray(correlation, dtype=float)
    L = psd_factor(corr)
    n = n_days * MINUTES_PER_DAY
    logret = (sig / np.sqrt(60.0))[:, None] * (L @ rng.standard_normal((len(assets), n - 1)))
    init = np.array([float((initial_prices or {}).get(a, 1.0)) for a in assets])
    return init[:, None] * np.exp(np.concatenate([np.zeros((len(assets), 1)), np.cumsum(logret, axis=1)], axis=1))
