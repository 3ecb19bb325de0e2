"""Minute-bar ingestion, day slicing, conditions, standardization and dataset assembly."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

T_DEFAULT = 300
RETURN_SCALE = 100.0
DEFAULT_SCHEMA = {"ticker": "ticker", "date": "date", "time": "time", "price": "price"}
MAX_BAD_ROW_FRACTION = 0.01


class DataError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class PriceBar:
    ticker: str
    timestamp: dt.datetime
    price: float


@dataclass(frozen=True)
class RowError:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


@dataclass
class DaySeries:
    ticker: str
    date: dt.date
    prices: np.ndarray

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        if self.prices.ndim != 1 or len(self.prices) < 2:
            raise DataError("a day needs at least two prices")
        if np.any(~(self.prices > 0)):
            raise DataError(f"{self.ticker} {self.date}: prices must be positive")

    @property
    def T(self) -> int:
        return len(self.prices) - 1

    @property
    def log_returns(self) -> np.ndarray:
        return np.diff(np.log(self.prices))

    @property
    def scaled_returns(self) -> np.ndarray:
        return RETURN_SCALE * self.log_returns

    @property
    def key(self) -> tuple[str, str]:
        return (self.date.isoformat(), self.ticker)

    @classmethod
    def from_scaled_returns(cls, ticker: str, date: dt.date, scaled_returns, p0: float = 1.0) -> "DaySeries":
        r = np.asarray(scaled_returns, dtype=float) / RETURN_SCALE
        prices = p0 * np.exp(np.concatenate([[0.0], np.cumsum(r)]))
        return cls(ticker, date, prices)


@dataclass(frozen=True)
class ConditionPair:
    trend: float
    rv: float

    def __post_init__(self):
        if not (math.isfinite(self.trend) and math.isfinite(self.rv)):
            raise DataError("conditions must be finite")
        if self.rv < 0:
            raise DataError("realized volatility must be nonnegative")

    def as_tuple(self) -> tuple[float, float]:
        return (self.trend, self.rv)


def conditions_from_returns(scaled_returns) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (trend, rv) over the last axis of an array of scaled returns."""
    r = np.asarray(scaled_returns, dtype=float)
    return r.sum(axis=-1), np.square(r).sum(axis=-1)


def compute_conditions(day: DaySeries) -> ConditionPair:
    trend, rv = conditions_from_returns(day.scaled_returns)
    return ConditionPair(float(trend), float(rv))


# ---------------------------------------------------------------- ingestion


def _parse_row(row: Mapping[str, str], schema: Mapping[str, str]) -> PriceBar:
    try:
        ticker = row[schema["ticker"]].strip()
        date = dt.date.fromisoformat(row[schema["date"]].strip())
        hh, mm = row[schema["time"]].strip().split(":")[:2]
        timestamp = dt.datetime.combine(date, dt.time(int(hh), int(mm)))
    except (KeyError, ValueError, AttributeError) as exc:
        raise DataError(f"unparseable timestamp ({exc})") from None
    try:
        price = float(row[schema["price"]])
    except (TypeError, ValueError):
        raise DataError(f"unparseable price {row.get(schema['price'])!r}") from None
    if not ticker:
        raise DataError("empty ticker")
    if not (price > 0 and math.isfinite(price)):
        raise DataError(f"non-positive price {price!r}")
    return PriceBar(ticker, timestamp, price)


def load_price_csv(path, schema: Mapping[str, str] | None = None) -> list[PriceBar]:
    """Read minute bars, sorted by (ticker, timestamp).

    Bad rows are logged with their line numbers; more than 1% bad rows aborts
    the load with a DataError listing all of them.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    bars, errors = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in schema.values() if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for row in reader:
            try:
                bars.append(_parse_row(row, schema))
            except DataError as exc:
                errors.append(RowError(reader.line_num, str(exc)))
    n = len(bars) + len(errors)
    if errors and len(errors) > MAX_BAD_ROW_FRACTION * n:
        raise DataError(f"{path}: {len(errors)}/{n} malformed rows: " + "; ".join(map(str, errors)))
    for err in errors:
        logger.warning("%s: skipped %s", path, err)
    bars.sort()
    return bars


def write_price_csv(days: Iterable[DaySeries], path, session: Sequence[int] | None = None) -> None:
    """Inverse of ingestion for complete days on a session grid (minutes of day)."""
    days = list(days)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["ticker", "date", "time", "price"])
        for d in days:
            grid = session if session is not None else default_session(d.T)
            for minute, p in zip(grid, d.prices):
                w.writerow([d.ticker, d.date.isoformat(), f"{minute // 60:02d}:{minute % 60:02d}", repr(float(p))])


def default_session(T: int = T_DEFAULT, open_minute: int = 9 * 60) -> list[int]:
    """T+1 consecutive minutes of day starting at the open."""
    return list(range(open_minute, open_minute + T + 1))


def forward_fill_and_slice(bars: Iterable[PriceBar], session: Sequence[int] | None = None) -> list[DaySeries]:
    """Place each ticker-day on the session grid, filling gaps with the last prior price.

    Only bars from the same day are used; a day with no bar at or before the
    first grid minute is dropped with a warning.
    """
    grid = np.asarray(session if session is not None else default_session(), dtype=int)
    grouped: dict[tuple[str, dt.date], list[PriceBar]] = defaultdict(list)
    for bar in bars:
        grouped[(bar.ticker, bar.timestamp.date())].append(bar)
    days = []
    for (ticker, date), day_bars in sorted(grouped.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        day_bars.sort()
        minutes = np.array([b.timestamp.hour * 60 + b.timestamp.minute for b in day_bars])
        prices = np.array([b.price for b in day_bars])
        # last bar at or before each grid minute; duplicates resolve to the later bar
        idx = np.searchsorted(minutes, grid, side="right") - 1
        if idx[0] < 0:
            logger.warning("dropping %s %s: no price at or before the open", ticker, date)
            continue
        days.append(DaySeries(ticker, date, prices[idx]))
    return days


# ---------------------------------------------------------- standardization


@dataclass(frozen=True)
class StandardizationStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DataError("standardization std must be positive")

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}


def standardize(days: Sequence[DaySeries]) -> tuple[StandardizationStats, list[np.ndarray]]:
    """Pooled moments over the given (training) days and the transformed days."""
    if not days:
        raise DataError("no days to standardize")
    pooled = np.concatenate([d.scaled_returns for d in days])
    mean, std = float(pooled.mean()), float(pooled.std())
    if std <= 1e-12 * max(1.0, abs(mean)):
        raise DataError("pooled returns have zero variance (degenerate corpus)")
    stats = StandardizationStats(mean, std)
    return stats, [stats.apply(d.scaled_returns) for d in days]


def destandardize(z, stats: StandardizationStats) -> np.ndarray:
    return stats.invert(z)


# ------------------------------------------------------------------ dataset

UPSAMPLE_MODES = ("additive", "copies", "flat")


@dataclass
class DatasetSplit:
    train: list[tuple[DaySeries, ConditionPair]]
    val: list[tuple[DaySeries, ConditionPair]]
    test: list[tuple[DaySeries, ConditionPair]]
    multiplicities: list[int]
    stats: StandardizationStats | None = None
    split_dates: dict = field(default_factory=dict)

    def expanded_train(self) -> list[tuple[DaySeries, ConditionPair]]:
        return [item for item, m in zip(self.train, self.multiplicities) for _ in range(m)]

    def train_weights(self) -> np.ndarray:
        w = np.asarray(self.multiplicities, dtype=float)
        return w / w.sum()

    def manifest(self) -> dict:
        def entries(items):
            return [{"ticker": d.ticker, "date": d.date.isoformat(), "trend": c.trend, "rv": c.rv}
                    for d, c in items]

        train = entries(self.train)
        for e, m in zip(train, self.multiplicities):
            e["multiplicity"] = m
        return {
            "split_dates": {k: [str(a), str(b)] for k, (a, b) in self.split_dates.items()},
            "stats": self.stats.to_dict() if self.stats else None,
            "train": train,
            "val": entries(self.val),
            "test": entries(self.test),
        }


def _as_date(x) -> dt.date:
    return x if isinstance(x, dt.date) else dt.date.fromisoformat(str(x))


def upsample_multiplicities(abs_trends: Sequence[float], keys: Sequence, tiers: Sequence[float] = (0.25, 0.10, 0.05),
                            mode: str = "additive", copies: int = 5) -> list[int]:
    """Per-day multiplicity from membership of top-|trend| quantile tiers.

    Ranking is by |trend| descending with ties broken by ascending key
    (date, ticker). Each tier takes the top ceil(q * n) ranks.
    """
    if mode not in UPSAMPLE_MODES:
        raise ValueError(f"unknown upsampling mode {mode!r}")
    n = len(abs_trends)
    order = sorted(range(n), key=lambda i: (-abs_trends[i], keys[i]))
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)
    membership = np.zeros(n, dtype=int)
    for q in tiers:
        if not 0 < q <= 1:
            raise ValueError(f"tier quantile {q} outside (0, 1]")
        membership += rank < math.ceil(q * n - 1e-9)
    if mode == "additive":
        mult = 1 + copies * membership
    elif mode == "copies":
        mult = np.where(membership > 0, copies * membership, 1)
    else:
        mult = np.where(membership > 0, copies, 1)
    return [int(m) for m in mult]


def build_dataset(days: Sequence[DaySeries], conditions: Sequence[ConditionPair] | None, split_dates: Mapping,
                  tiers: Sequence[float] = (0.25, 0.10, 0.05), mode: str = "additive") -> DatasetSplit:
    """Assign days to date-range splits and upsample the training split.

    ``split_dates`` maps each of train/val/test to an inclusive (start, end) pair.
    Standardization stats are computed from the training split.
    """
    if conditions is None:
        conditions = [compute_conditions(d) for d in days]
    ranges = {name: (_as_date(a), _as_date(b)) for name, (a, b) in split_dates.items()}
    if set(ranges) != {"train", "val", "test"}:
        raise DataError("split_dates needs exactly train, val and test ranges")
    names = list(ranges)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            (s1, e1), (s2, e2) = ranges[a], ranges[b]
            if s1 <= e2 and s2 <= e1:
                raise DataError(f"split date ranges {a} and {b} overlap")
    parts = {name: [] for name in ranges}
    for day, cond in sorted(zip(days, conditions), key=lambda dc: dc[0].key):
        for name, (start, end) in ranges.items():
            if start <= day.date <= end:
                parts[name].append((day, cond))
                break
    train = parts["train"]
    mult = upsample_multiplicities([abs(c.trend) for _, c in train], [d.key for d, _ in train], tiers, mode)
    stats = standardize([d for d, _ in train])[0] if train else None
    return DatasetSplit(train, parts["val"], parts["test"], mult, stats, ranges)


def write_manifest(split: DatasetSplit, path) -> None:
    Path(path).write_text(json.dumps(split.manifest(), indent=2))


def write_day_returns(day: DaySeries, path) -> None:
    np.savetxt(path, day.scaled_returns, delimiter=",", fmt="%.17g", header="scaled_return", comments="")


# ------------------------------------------------------------ toy corpus


def business_days(start, n: int) -> list[dt.date]:
    first = np.busday_offset(np.datetime64(_as_date(start)), 0, roll="forward")
    return [d.astype(dt.date) for d in np.busday_offset(first, np.arange(n))]


def toy_garch_corpus(n_days: int = 2000, T: int = T_DEFAULT, seed: int = 0, start="2015-01-01",
                     ticker: str = "TOY", rv_range=(5.0, 120.0), trend_range=(-12.0, 12.0),
                     garch=(0.1, 0.1, 0.8)) -> list[DaySeries]:
    """Stand-in for proprietary minute data.

    Each day is a GARCH(1,1) path with unit stationary variance, rescaled so its
    expected realized volatility is drawn log-uniformly from ``rv_range`` and
    shifted by a per-day drift whose total is uniform on ``trend_range``.
    """
    from cofindiff.baselines.stochastic import GarchParams, simulate_garch

    rng = np.random.default_rng(seed)
    omega, lam, nu = garch
    params = GarchParams(omega, lam, nu)
    unit = params.stationary_variance
    target_rv = np.exp(rng.uniform(*np.log(rv_range), size=n_days))
    drift = rng.uniform(*trend_range, size=n_days)
    seeds = rng.integers(0, 2**63 - 1, size=n_days)
    days = []
    for date, rv, mu, s in zip(business_days(start, n_days), target_rv, drift, seeds):
        g = simulate_garch(params, T, seed=int(s)) / math.sqrt(unit)
        scaled = g * math.sqrt(rv / T) + mu / T
        days.append(DaySeries.from_scaled_returns(ticker, date, scaled, p0=1000.0))
    return days
