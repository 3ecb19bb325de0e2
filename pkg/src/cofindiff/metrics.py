"""Stylized-fact statistics, condition fidelity and sample diversity."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from cofindiff.market_data import ConditionPair, conditions_from_returns

logger = logging.getLogger(__name__)

ACORR_LAGS = (1, 5, 10, 20, 30)
HILL_BAND = (2.80, 3.40)


class MetricError(ValueError):
    """A statistic is undefined for the given input."""


def fisher_kurtosis(r) -> np.ndarray | float:
    """Bias-corrected excess kurtosis over the last axis (sample std, ddof=1)."""
    r = np.asarray(r, dtype=float)
    T = r.shape[-1]
    if T < 4:
        raise MetricError("kurtosis needs at least 4 observations")
    dev = r - r.mean(axis=-1, keepdims=True)
    s = np.sqrt(np.square(dev).sum(axis=-1, keepdims=True) / (T - 1))
    if np.any(s == 0):
        raise MetricError("kurtosis undefined for zero-variance series")
    m4 = ((dev / s) ** 4).sum(axis=-1)
    k = T * (T + 1) / ((T - 1) * (T - 2) * (T - 3)) * m4 - 3 * (T - 1) ** 2 / ((T - 2) * (T - 3))
    return float(k) if np.ndim(k) == 0 else k


def hill_index(abs_returns, tail_frac: float = 0.05, k: int | None = None) -> float:
    """Hill tail-index estimate from the k largest values, k = ceil(tail_frac * n)."""
    x = np.sort(np.asarray(abs_returns, dtype=float).ravel())
    n = len(x)
    if n < 20:
        raise MetricError("Hill estimator needs at least 20 observations")
    if np.any(x < 0):
        raise MetricError("Hill estimator expects absolute values")
    if k is None:
        k = math.ceil(tail_frac * n - 1e-9)
    if not 2 <= k <= n:
        raise MetricError(f"need 2 <= k <= n, got k={k}")
    tail = x[n - k:]
    if tail[0] == 0:
        raise MetricError("Hill threshold order statistic is zero")
    mean_log = np.log(tail / tail[0]).mean()
    if mean_log == 0:
        raise MetricError("Hill estimator undefined: flat tail")
    return float(1.0 / mean_log)


def autocorrelation(x, tau: int) -> np.ndarray | float:
    """Lag-tau autocorrelation normalised by the total sum of squares (last axis)."""
    x = np.asarray(x, dtype=float)
    T = x.shape[-1]
    if not 0 < tau < T:
        raise MetricError(f"lag must satisfy 0 < tau < {T}")
    dev = x - x.mean(axis=-1, keepdims=True)
    denom = np.square(dev).sum(axis=-1)
    if np.any(denom == 0):
        raise MetricError("autocorrelation undefined for zero-variance series")
    rho = (dev[..., :-tau] * dev[..., tau:]).sum(axis=-1) / denom
    return float(rho) if np.ndim(rho) == 0 else rho


@dataclass
class StylizedFactReport:
    kurtosis_mean: float
    kurtosis_std: float
    hill: float
    acorr: dict[int, tuple[float, float]]
    verdict_fat_tail: bool
    verdict_vol_clustering: bool
    n_days: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["acorr"] = {str(k): list(v) for k, v in self.acorr.items()}
        return d


def stylized_fact_report(days, lags: Sequence[int] = ACORR_LAGS, tail_frac: float = 0.05,
                         hill_band: tuple[float, float] = HILL_BAND) -> StylizedFactReport:
    """Kurtosis per day, Hill on pooled |returns|, autocorrelation of |returns| per day.

    ``days`` is an array (n_days, T) or a list of equal-length return sequences.
    """
    r = np.asarray(days, dtype=float)
    if r.ndim != 2 or len(r) < 30:
        raise MetricError("stylized facts need at least 30 days of returns")
    kurt = fisher_kurtosis(r)
    a = np.abs(r)
    hill = hill_index(a, tail_frac)
    acorr = {}
    for lag in lags:
        rho = autocorrelation(a, lag)
        acorr[int(lag)] = (float(rho.mean()), float(rho.std()))
    n = len(r)
    fat = bool(kurt.mean() > 0 and hill_band[0] <= hill <= hill_band[1])
    clustering = all(m > 2 * s / math.sqrt(n) for m, s in acorr.values())
    return StylizedFactReport(float(kurt.mean()), float(kurt.std()), hill, acorr, fat, clustering, n)


# ------------------------------------------------------- condition fidelity


@dataclass
class ConditionGrid:
    trends: tuple[float, ...] = tuple(np.linspace(-10.0, 10.0, 9))
    rvs: tuple[float, ...] = tuple(np.linspace(10.0, 100.0, 10))

    def pairs(self) -> list[ConditionPair]:
        return [ConditionPair(float(m), float(v)) for m in self.trends for v in self.rvs]

    def check_disjoint(self, training: Sequence[ConditionPair]) -> None:
        seen = {c.as_tuple() for c in training}
        clash = [p for p in self.pairs() if p.as_tuple() in seen]
        if clash:
            raise ValueError(f"{len(clash)} grid conditions also appear in training data")


# generator(conditions, count, seed) -> array (len(conditions), count, T) of scaled returns
Generator = Callable[[Sequence[ConditionPair], int, int], np.ndarray]


@dataclass
class ConditionMAE:
    trend_mae: float
    rv_mae: float
    scatter: list[tuple[float, float, float, float]] = field(default_factory=list)
    skipped: list[tuple[float, float, str]] = field(default_factory=list)

    def baseline(self) -> tuple[float, float]:
        """MAE of a generator that always realises (0, 0)."""
        req = np.array([s[:2] for s in self.scatter])
        return float(np.abs(req[:, 0]).mean()), float(np.abs(req[:, 1]).mean())

    def to_dict(self) -> dict:
        return {"trend_mae": self.trend_mae, "rv_mae": self.rv_mae, "n_samples": len(self.scatter),
                "skipped": [list(s) for s in self.skipped]}

    def write_scatter_csv(self, path) -> None:
        np.savetxt(path, np.array(self.scatter).reshape(-1, 4), delimiter=",", fmt="%.10g", comments="",
                   header="requested_trend,requested_rv,realized_trend,realized_rv")


def condition_mae(generator: Generator, grid: ConditionGrid | Sequence[ConditionPair], per_point: int = 1,
                  seed: int = 0) -> ConditionMAE:
    conds = grid.pairs() if isinstance(grid, ConditionGrid) else list(grid)
    try:
        samples = [np.asarray(s) for s in generator(conds, per_point, seed)]
    except Exception:  # noqa: BLE001 - fall back to isolating the failing points
        logger.exception("batched generation failed; retrying point by point")
        samples = []
        for i, c in enumerate(conds):
            try:
                samples.append(np.asarray(generator([c], per_point, seed + i))[0])
            except Exception as exc:  # noqa: BLE001
                samples.append(exc)
    scatter, skipped = [], []
    for c, s in zip(conds, samples):
        if isinstance(s, Exception):
            skipped.append((c.trend, c.rv, repr(s)))
            continue
        trend, rv = conditions_from_returns(s)
        scatter.extend((c.trend, c.rv, float(m), float(v)) for m, v in zip(np.atleast_1d(trend), np.atleast_1d(rv)))
    if not scatter:
        raise MetricError("every grid point failed to generate")
    arr = np.array(scatter)
    return ConditionMAE(float(np.abs(arr[:, 2] - arr[:, 0]).mean()), float(np.abs(arr[:, 3] - arr[:, 1]).mean()),
                        scatter, skipped)


# ---------------------------------------------------------------- diversity


def _dtw_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Accumulated |a_i - b_j| cost along the best monotone path, for P pairs at once.

    Sweeps anti-diagonals i + j = d. Buffers are (n + 1, P) with row i + 1 holding
    cell i of the diagonal; b is stored reversed so each diagonal is a plain slice.
    """
    P, n = a.shape
    m = b.shape[1]
    A = np.ascontiguousarray(a.T)
    Br = np.ascontiguousarray(b.T[::-1])
    prev2 = np.full((n + 1, P), np.inf)
    prev2[0] = 0.0  # virtual cell (-1, -1)
    prev1 = np.full((n + 1, P), np.inf)
    cur = np.full((n + 1, P), np.inf)
    for d in range(n + m - 1):
        lo, hi = max(0, d - m + 1), min(d, n - 1)
        cost = np.abs(A[lo:hi + 1] - Br[m - 1 - d + lo:m - d + hi])
        best = np.minimum(np.minimum(prev2[lo:hi + 1], prev1[lo:hi + 1]), prev1[lo + 1:hi + 2])
        np.add(cost, best, out=cur[lo + 1:hi + 2])
        cur[lo] = np.inf
        if hi + 2 <= n:
            cur[hi + 2] = np.inf
        prev2, prev1, cur = prev1, cur, prev2
    return prev1[n].copy()


def dtw_distance(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) == 0 or len(b) == 0:
        raise MetricError("DTW needs non-empty sequences")
    return float(_dtw_batch(a[None], b[None])[0])


def euclidean_distance(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise MetricError(f"Euclidean distance needs equal lengths, got {a.shape} and {b.shape}")
    return float(np.sqrt(np.square(a - b).sum()))


@dataclass
class DiversityReport:
    n_pairs: int
    dtw: tuple[float, float]
    euclidean: tuple[float, float]

    def to_dict(self) -> dict:
        return {"n_pairs": self.n_pairs, "dtw": list(self.dtw), "euclidean": list(self.euclidean)}


def pairwise_distances(samples, chunk: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """DTW and Euclidean distances for all unordered pairs (i < j)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise MetricError("samples must be equal-length sequences")
    if len(x) < 2:
        raise MetricError("diversity needs at least two samples")
    I, J = np.triu_indices(len(x), k=1)
    eu = np.sqrt(np.square(x[I] - x[J]).sum(axis=1))
    dtw = np.concatenate([_dtw_batch(x[I[s:s + chunk]], x[J[s:s + chunk]]) for s in range(0, len(I), chunk)])
    return dtw, eu


def diversity_report(samples) -> DiversityReport:
    try:
        dtw, eu = pairwise_distances(samples)
    except ValueError as exc:
        raise MetricError(f"Euclidean distance needs equal-length samples ({exc})") from None
    return DiversityReport(len(dtw), (float(dtw.mean()), float(dtw.std())), (float(eu.mean()), float(eu.std())))
