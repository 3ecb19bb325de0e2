"""Deep hedging of a European call: policy network, P&L ledger, risk measures, evaluation."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from scipy.special import ndtr
from torch import nn

from cofindiff.market_data import RETURN_SCALE, DaySeries, compute_conditions

logger = logging.getLogger(__name__)

FEATURES = ("price", "time_to_maturity", "prev_position", "volatility", "delta", "gamma", "theta")
DELTA = FEATURES.index("delta")


class HedgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptionSpec:
    strike: float = 1.0
    maturity: int = 300

    def payoff(self, s_T):
        if isinstance(s_T, torch.Tensor):
            return torch.clamp(s_T - self.strike, min=0.0)
        return np.maximum(np.asarray(s_T) - self.strike, 0.0)


@dataclass(frozen=True)
class RiskParams:
    erm_gamma: float = 100.0
    cvar_alpha: float = 0.05

    def __post_init__(self):
        if not self.erm_gamma > 0:
            raise ValueError("ERM risk aversion must be positive")
        if not 0 < self.cvar_alpha < 1:
            raise ValueError("CVaR level must lie in (0, 1)")


def rv_to_sigma(rv):
    """Realized volatility (sum of squared x100 returns) -> per-episode log-return std."""
    return np.sqrt(np.asarray(rv, dtype=float)) / RETURN_SCALE


def bs_features(S, K, sigma, tau):
    """Zero-rate Black-Scholes (delta, gamma, theta); tau in the time unit of sigma.

    At tau = 0 (or sigma = 0) the limit is used: delta = 1{S > K} (0.5 at S = K),
    gamma = theta = 0.
    """
    S, K, sigma, tau = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (S, K, sigma, tau)))
    vol = sigma * np.sqrt(tau)
    live = vol > 0
    safe_vol = np.where(live, vol, 1.0)
    d1 = (np.log(S / K) + 0.5 * vol**2) / safe_vol
    pdf = np.exp(-0.5 * d1**2) / math.sqrt(2 * math.pi)
    delta = np.where(live, ndtr(d1), np.where(S > K, 1.0, np.where(S == K, 0.5, 0.0)))
    gamma = np.where(live, pdf / (S * safe_vol), 0.0)
    theta = np.where(live, -S * pdf * sigma / (2 * np.sqrt(np.where(live, tau, 1.0))), 0.0)
    if delta.ndim == 0:
        return float(delta), float(gamma), float(theta)
    return delta, gamma, theta


def path_features(paths: np.ndarray, vol_feature: np.ndarray, spec: OptionSpec) -> np.ndarray:
    """Per-step features except the previous position, shape (N, T, 7); slot 2 left zero."""
    paths = np.asarray(paths, dtype=float)
    N, T1 = paths.shape
    T = T1 - 1
    S = paths[:, :T]
    tau = np.broadcast_to((T - np.arange(T)) / T, S.shape)
    sigma = np.broadcast_to(rv_to_sigma(vol_feature)[:, None], S.shape)
    delta, gamma, theta = bs_features(S, spec.strike, sigma, tau)
    feats = np.zeros((N, T, len(FEATURES)))
    feats[..., 0] = S
    feats[..., 1] = tau
    feats[..., 3] = sigma
    feats[..., 4] = delta
    feats[..., 5] = gamma
    feats[..., 6] = theta
    return feats


# ------------------------------------------------------------------ policies


class HedgePolicy(nn.Module):
    """Five fully connected layers, ReLU + layer norm between them."""

    def __init__(self, n_features: int = len(FEATURES), width: int = 64, layers: int = 5):
        super().__init__()
        mods: list[nn.Module] = []
        d = n_features
        for _ in range(layers - 1):
            mods += [nn.Linear(d, width), nn.LayerNorm(width), nn.ReLU()]
            d = width
        mods.append(nn.Linear(d, 1))
        self.net = nn.Sequential(*mods)
        self.register_buffer("feat_mean", torch.zeros(n_features, dtype=torch.float64))
        self.register_buffer("feat_std", torch.ones(n_features, dtype=torch.float64))

    def fit_normalization(self, feats: np.ndarray) -> None:
        flat = feats.reshape(-1, feats.shape[-1])
        std = flat.std(axis=0)
        self.feat_mean.copy_(torch.as_tensor(flat.mean(axis=0)))
        self.feat_std.copy_(torch.as_tensor(np.where(std > 1e-12, std, 1.0)))

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        z = (feats - self.feat_mean) / self.feat_std
        return self.net(z.to(self.net[0].weight.dtype)).squeeze(-1).to(feats.dtype)


def zero_policy(feats: torch.Tensor) -> torch.Tensor:
    return torch.zeros(feats.shape[0], dtype=feats.dtype)


def delta_policy(feats: torch.Tensor) -> torch.Tensor:
    return feats[:, DELTA]


Policy = Callable[[torch.Tensor], torch.Tensor]


# -------------------------------------------------------------------- ledger


@dataclass
class HedgeEpisodes:
    """A batch of simulated episodes; X is the terminal gain."""

    prices: np.ndarray  # (N, T+1), S_0 = 1
    positions: np.ndarray  # (N, T)
    step_costs: np.ndarray  # (N, T+1), last column is the terminal unwind
    gains: np.ndarray
    payoff: np.ndarray
    cost: np.ndarray
    pnl: np.ndarray

    def conservation_residual(self) -> np.ndarray:
        return self.pnl + self.payoff - self.gains + self.cost

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "step", "S", "delta", "cost"])
            N, T = self.positions.shape
            for i in range(N):
                for t in range(T + 1):
                    pos = self.positions[i, t] if t < T else 0.0
                    w.writerow([i, t, repr(float(self.prices[i, t])), repr(float(pos)),
                                repr(float(self.step_costs[i, t]))])


def _simulate(policy: Policy, paths: torch.Tensor, feats: torch.Tensor, spec: OptionSpec, cost_rate: float):
    N, T1 = paths.shape
    T = T1 - 1
    prev = torch.zeros(N, dtype=paths.dtype)
    positions, step_costs = [], []
    for t in range(T):
        f = feats[:, t].clone()
        f[:, 2] = prev
        delta = policy(f)
        if not torch.isfinite(delta).all():
            bad = (~torch.isfinite(delta)).nonzero().flatten().tolist()[:5]
            raise HedgeError(f"non-finite policy output at step {t} for paths {bad}")
        step_costs.append(cost_rate * paths[:, t] * (delta - prev).abs())
        positions.append(delta)
        prev = delta
    step_costs.append(cost_rate * paths[:, T] * prev.abs())
    pos = torch.stack(positions, dim=1)
    sc = torch.stack(step_costs, dim=1)
    gains = (pos * (paths[:, 1:] - paths[:, :-1])).sum(dim=1)
    cost = sc.sum(dim=1)
    payoff = spec.payoff(paths[:, T])
    pnl = -payoff + gains - cost
    return pos, sc, gains, payoff, cost, pnl


def simulate_hedge(policy: Policy, paths, spec: OptionSpec = OptionSpec(), cost_rate: float = 1e-4,
                   vol_feature=None, feats: np.ndarray | None = None) -> HedgeEpisodes:
    """Run ``policy`` over price paths rescaled to S_0 = 1.

    ``vol_feature`` is the per-path realized volatility (ConditionPair units).
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    if np.any(np.abs(paths[:, 0] - 1.0) > 1e-12):
        raise HedgeError("paths must be rescaled so that S_0 = 1")
    if feats is None:
        vol = np.broadcast_to(np.asarray(vol_feature, dtype=float), (len(paths),))
        feats = path_features(paths, vol, spec)
    with torch.no_grad():
        out = _simulate(policy, torch.as_tensor(paths), torch.as_tensor(feats), spec, cost_rate)
    pos, sc, gains, payoff, cost, pnl = (v.numpy() for v in out)
    return HedgeEpisodes(paths, pos, sc, gains, payoff, cost, pnl)


# ------------------------------------------------------------ risk measures


def erm(X, gamma: float = 100.0) -> float:
    """(1/gamma) log E[exp(-gamma X)], shifted by the max exponent for overflow safety."""
    X = np.asarray(X, dtype=float).ravel()
    if X.size == 0:
        raise ValueError("ERM of an empty sample")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    z = -gamma * X
    m = z.max()
    return float((m + np.log(np.mean(np.exp(z - m)))) / gamma)


def erm_loss(X: torch.Tensor, gamma: float = 100.0) -> torch.Tensor:
    return (torch.logsumexp(-gamma * X, dim=0) - math.log(X.numel())) / gamma


def var_cvar(X, alpha: float = 0.05, mode: str = "tail") -> tuple[float, float]:
    """(VaR, CVaR) of losses L = -X at tail probability alpha.

    VaR is the empirical (1 - alpha) quantile of L (inf-definition). In ``tail``
    mode CVaR is the mean of the ceil(alpha n) largest losses. ``literal`` mode
    instead integrates the empirical quantile of X over u in [alpha, 1] and
    divides by 1 - alpha.
    """
    X = np.asarray(X, dtype=float).ravel()
    n = X.size
    if n == 0:
        raise ValueError("VaR/CVaR of an empty sample")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    L = np.sort(-X)
    var = float(L[math.ceil((1 - alpha) * n - 1e-9) - 1])
    if mode == "tail":
        k = math.ceil(alpha * n - 1e-9)
        return var, float(L[n - k:].mean())
    if mode == "literal":
        xs = np.sort(X)
        lo = np.arange(n) / n
        hi = np.arange(1, n + 1) / n
        weight = np.clip(hi - np.maximum(lo, alpha), 0.0, None)
        return var, float((weight * xs).sum() / (1 - alpha))
    raise ValueError(f"unknown CVaR mode {mode!r}")


# ------------------------------------------------------------------ episodes


@dataclass
class EpisodeSet:
    paths: np.ndarray  # (N, T+1), S_0 = 1
    vol_feature: np.ndarray  # (N,) realized-volatility units
    trend: np.ndarray  # (N,) realized trend of each path
    rv: np.ndarray  # (N,) realized volatility of each path

    def __len__(self):
        return len(self.paths)

    def subset(self, mask) -> "EpisodeSet":
        return EpisodeSet(self.paths[mask], self.vol_feature[mask], self.trend[mask], self.rv[mask])

    @classmethod
    def from_scaled_returns(cls, scaled_returns, vol_feature) -> "EpisodeSet":
        r = np.atleast_2d(np.asarray(scaled_returns, dtype=float))
        log_paths = np.concatenate([np.zeros((len(r), 1)), np.cumsum(r / RETURN_SCALE, axis=1)], axis=1)
        return cls(np.exp(log_paths), np.broadcast_to(np.asarray(vol_feature, float), (len(r),)).copy(),
                   r.sum(axis=1), np.square(r).sum(axis=1))


def real_episodes(days: Sequence[DaySeries]) -> EpisodeSet:
    """Episodes from market days; the volatility input is the same ticker's previous-day RV.

    The first day of each ticker has no predecessor and is skipped.
    """
    ordered = sorted(days, key=lambda d: (d.ticker, d.date))
    returns, vol = [], []
    for prev, day in zip(ordered, ordered[1:]):
        if prev.ticker == day.ticker:
            returns.append(day.scaled_returns)
            vol.append(compute_conditions(prev).rv)
    if not returns:
        raise ValueError("need at least two consecutive days of one ticker")
    return EpisodeSet.from_scaled_returns(np.stack(returns), np.array(vol))


def normalize_zero_trend(scaled_returns) -> np.ndarray:
    r = np.asarray(scaled_returns, dtype=float)
    return r - r.mean(axis=-1, keepdims=True)


def synthetic_episodes(generator, conditions, per_condition: int = 20, seed: int = 0,
                       zero_trend: bool = False) -> EpisodeSet:
    """Generator-driven episodes; the volatility input is the requested RV condition."""
    conditions = list(conditions)
    r = np.asarray(generator(conditions, per_condition, seed))
    r = r.reshape(-1, r.shape[-1])
    if zero_trend:
        r = normalize_zero_trend(r)
    vol = np.repeat([c.rv for c in conditions], per_condition)
    return EpisodeSet.from_scaled_returns(r, vol)


def gbm_episodes(n: int, sigma: float = 0.02, T: int = 300, seed=None) -> EpisodeSet:
    """Zero-drift GBM paths over one episode (unit time), volatility input = true RV units."""
    from cofindiff.baselines.stochastic import GBMParams, gbm_log_returns

    r = gbm_log_returns(GBMParams(0.0, sigma), T, n, seed) * RETURN_SCALE
    return EpisodeSet.from_scaled_returns(r, (sigma * RETURN_SCALE) ** 2)


# ------------------------------------------------------------------ training


@dataclass
class HedgeControl:
    lr: float = 1e-5
    max_epochs: int = 3000
    patience: int = 100
    batch_size: int = 512
    cost_rate: float = 1e-4
    seed: int = 0
    width: int = 64
    time_budget_s: float | None = None

    @classmethod
    def for_slice(cls, slice_name: str, **overrides) -> "HedgeControl":
        base = {"lr": 1e-4, "patience": 1000} if slice_name == "uptrend" else {}
        return cls(**{**base, **overrides})


@dataclass
class HedgerState:
    policy: HedgePolicy
    epoch: int = 0
    best_val: float = math.inf
    best_epoch: int = -1
    history: list[dict] = field(default_factory=list)


def train_hedger(train: EpisodeSet, val: EpisodeSet, risk: RiskParams = RiskParams(),
                 ctl: HedgeControl = HedgeControl(), spec: OptionSpec = OptionSpec()) -> HedgerState:
    """Minimise ERM of the hedged gain over minibatches; keep the best-validation weights."""
    import time

    torch.manual_seed(ctl.seed)
    rng = np.random.default_rng(ctl.seed)
    policy = HedgePolicy(width=ctl.width).double()
    train_feats = path_features(train.paths, train.vol_feature, spec)
    val_feats = path_features(val.paths, val.vol_feature, spec)
    policy.fit_normalization(train_feats)
    tp, tf = torch.as_tensor(train.paths), torch.as_tensor(train_feats)
    vp, vf = torch.as_tensor(val.paths), torch.as_tensor(val_feats)
    opt = torch.optim.Adam(policy.parameters(), lr=ctl.lr)
    state = HedgerState(policy)
    best = copy.deepcopy(policy.state_dict())
    stale = 0
    started = time.monotonic()
    for epoch in range(ctl.max_epochs):
        order = torch.as_tensor(rng.permutation(len(train)))
        losses = []
        for s in range(0, len(order), ctl.batch_size):
            b = order[s:s + ctl.batch_size]
            pnl = _simulate(policy, tp[b], tf[b], spec, ctl.cost_rate)[-1]
            loss = erm_loss(pnl, risk.erm_gamma)
            if not torch.isfinite(loss):
                raise HedgeError(f"non-finite hedging loss at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        with torch.no_grad():
            val_loss = erm_loss(_simulate(policy, vp, vf, spec, ctl.cost_rate)[-1], risk.erm_gamma).item()
        state.history.append({"epoch": epoch, "train_erm": float(np.mean(losses)), "val_erm": val_loss})
        logger.info("hedger epoch %d train %.5f val %.5f", epoch, np.mean(losses), val_loss)
        state.epoch = epoch + 1
        if val_loss < state.best_val:
            state.best_val, state.best_epoch, stale = val_loss, epoch, 0
            best = copy.deepcopy(policy.state_dict())
        else:
            stale += 1
            if stale >= ctl.patience:
                break
        if ctl.time_budget_s is not None and time.monotonic() - started > ctl.time_budget_s:
            break
    policy.load_state_dict(best)
    policy.eval()
    return state


# ---------------------------------------------------------------- evaluation

SLICES = ("all", "uptrend", "high_vol")


def scenario_masks(episodes: EpisodeSet, vol_quantile: float = 0.9) -> dict[str, np.ndarray]:
    return {
        "all": np.ones(len(episodes), dtype=bool),
        "uptrend": episodes.trend > 0,
        "high_vol": episodes.rv >= np.quantile(episodes.rv, vol_quantile),
    }


def evaluate_hedger(policies: dict[str, Policy], episodes: EpisodeSet, risk: RiskParams = RiskParams(),
                    cost_rate: float = 1e-4, spec: OptionSpec = OptionSpec(),
                    slices: Sequence[str] = SLICES) -> dict:
    """ERM and CVaR per policy and scenario slice; the delta hedge is always included."""
    policies = {**policies}
    policies.setdefault("delta_hedge", delta_policy)
    masks = scenario_masks(episodes)
    feats = path_features(episodes.paths, episodes.vol_feature, spec)
    report: dict = {"risk": {"erm_gamma": risk.erm_gamma, "cvar_alpha": risk.cvar_alpha},
                    "cost_rate": cost_rate, "policies": {}}
    for name, policy in policies.items():
        ep = simulate_hedge(policy, episodes.paths, spec, cost_rate, feats=feats)
        rows = {}
        for s in slices:
            mask = masks[s]
            if not mask.any():
                rows[s] = None
                continue
            X = ep.pnl[mask]
            rows[s] = {"erm": erm(X, risk.erm_gamma), "cvar": var_cvar(X, risk.cvar_alpha)[1], "n": int(mask.sum())}
        report["policies"][name] = rows
    return report
