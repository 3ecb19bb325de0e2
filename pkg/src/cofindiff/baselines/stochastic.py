"""Statistical reference generators: geometric Brownian motion and GARCH(1,1)."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from cofindiff.market_data import T_DEFAULT, DaySeries


@dataclass(frozen=True)
class GBMParams:
    mu: float = 0.0
    sigma: float = 1.0
    dt: float | None = None  # defaults to 1/T, one day = unit time

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")


def gbm_log_returns(p: GBMParams, T: int = T_DEFAULT, n_paths: int = 1, seed=None) -> np.ndarray:
    """Exact log-Euler increments, shape (n_paths, T)."""
    step = p.dt if p.dt is not None else 1.0 / T
    z = np.random.default_rng(seed).standard_normal((n_paths, T))
    return (p.mu - 0.5 * p.sigma**2) * step + p.sigma * np.sqrt(step) * z


def simulate_gbm(p: GBMParams, T: int = T_DEFAULT, p0: float = 1.0, seed=None,
                 ticker: str = "GBM", date: dt.date = dt.date(2000, 1, 3)) -> DaySeries:
    if not p0 > 0:
        raise ValueError("p0 must be positive")
    r = gbm_log_returns(p, T, 1, seed)[0]
    return DaySeries(ticker, date, p0 * np.exp(np.concatenate([[0.0], np.cumsum(r)])))


@dataclass(frozen=True)
class GarchParams:
    omega: float = 0.1
    lam: float = 0.1
    nu: float = 0.8
    sigma0_sq: float | None = None  # defaults to the stationary variance

    def __post_init__(self):
        if self.omega <= 0 or self.lam < 0 or self.nu < 0:
            raise ValueError("need omega > 0 and lambda, nu >= 0")
        if self.lam + self.nu >= 1:
            raise ValueError(f"lambda + nu = {self.lam + self.nu} violates stationarity (< 1)")
        if self.sigma0_sq is not None and not self.sigma0_sq > 0:
            raise ValueError("sigma0_sq must be positive")

    @property
    def stationary_variance(self) -> float:
        return self.omega / (1.0 - self.lam - self.nu)


def simulate_garch(p: GarchParams, T: int = T_DEFAULT, seed=None, n_paths: int | None = None,
                   return_variance: bool = False):
    """r_t = sigma_t eps_t with sigma_t^2 = omega + lambda r_{t-1}^2 + nu sigma_{t-1}^2.

    Returns shape (T,) or (n_paths, T) when ``n_paths`` is given; every path
    starts from ``sigma0_sq``.
    """
    n = 1 if n_paths is None else n_paths
    eps = np.random.default_rng(seed).standard_normal((n, T))
    r = np.empty((n, T))
    var = np.empty((n, T))
    s2 = np.full(n, p.sigma0_sq if p.sigma0_sq is not None else p.stationary_variance)
    for t in range(T):
        var[:, t] = s2
        r[:, t] = np.sqrt(s2) * eps[:, t]
        s2 = p.omega + p.lam * r[:, t] ** 2 + p.nu * s2
    if n_paths is None:
        r, var = r[0], var[0]
    return (r, var) if return_variance else r
