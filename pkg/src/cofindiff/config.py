"""Run configuration: typed sections with defaults, strict validation, canonical emission."""
from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, get_args, get_origin, get_type_hints

import yaml


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


@dataclass
class DataConfig:
    csv_path: Optional[str] = None  # None: generate the GARCH toy corpus
    schema: dict = field(default_factory=lambda: {"ticker": "ticker", "date": "date", "time": "time",
                                                  "price": "price"})
    T: int = 300
    toy_days: int = 2000
    toy_seed: int = 0
    split_dates: dict = field(default_factory=lambda: {
        "train": ["2015-01-01", "2019-12-31"],
        "val": ["2020-01-01", "2020-12-31"],
        "test": ["2021-01-01", "2099-12-31"],
    })
    tiers: list = field(default_factory=lambda: [0.25, 0.10, 0.05])
    upsample_mode: str = "additive"

    def __post_init__(self):
        # unquoted YAML dates arrive as datetime.date
        if isinstance(self.split_dates, dict):
            self.split_dates = {k: [d.isoformat() if isinstance(d, dt.date) else d for d in v]
                                if isinstance(v, (list, tuple)) else v for k, v in self.split_dates.items()}

    def problems(self) -> list[str]:
        out = []
        if self.T < 2:
            out.append("data.T must be at least 2")
        if self.toy_days < 1:
            out.append("data.toy_days must be positive")
        if set(self.split_dates) != {"train", "val", "test"}:
            out.append("data.split_dates needs train, val and test")
        elif any(not isinstance(v, list) or len(v) != 2 for v in self.split_dates.values()):
            out.append("data.split_dates entries must be [start, end] pairs")
        if any(not 0 < q <= 1 for q in self.tiers):
            out.append("data.tiers must lie in (0, 1]")
        if self.upsample_mode not in ("additive", "copies", "flat"):
            out.append("data.upsample_mode must be additive, copies or flat")
        return out


@dataclass
class WaveletConfig:
    rows: int = 152
    cols: int = 16

    def problems(self) -> list[str]:
        return [] if self.rows > 0 and self.cols > 0 else ["wavelet.rows/cols must be positive"]


@dataclass
class DiffusionConfig:
    K: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    variance: str = "beta"
    base_channels: int = 20
    channel_mult: list = field(default_factory=lambda: [1, 2, 4])
    attention_heads: int = 4
    res_blocks: int = 2
    cond_embed_dim: int = 32
    cond_tokens: int = 4
    p_uncond: float = 0.1
    lr: float = 1e-4
    lr_min: float = 5e-6
    max_epochs: int = 3000
    patience: int = 100
    batch_size: int = 64
    steps_per_epoch: Optional[int] = None
    time_budget_s: Optional[float] = None
    gamma: float = 1.0

    def problems(self) -> list[str]:
        out = []
        if self.K < 1:
            out.append("diffusion.K must be positive")
        if not 0 < self.beta_start < 1:
            out.append(f"diffusion.beta_start={self.beta_start} must lie in (0, 1)")
        if not 0 < self.beta_end < 1:
            out.append(f"diffusion.beta_end={self.beta_end} must lie in (0, 1)")
        elif self.K > 1 and not self.beta_start < self.beta_end:
            out.append("diffusion.beta_start must be below beta_end")
        if self.variance not in ("beta", "posterior"):
            out.append("diffusion.variance must be beta or posterior")
        if not 0 <= self.p_uncond < 1:
            out.append("diffusion.p_uncond must lie in [0, 1)")
        if not 0 < self.lr_min <= self.lr:
            out.append("diffusion.lr_min must be positive and at most lr")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            out.append("diffusion.patience, max_epochs and batch_size must be positive")
        return out


@dataclass
class BaselinesConfig:
    flavors: list = field(default_factory=lambda: ["least_squares", "wasserstein"])
    latent_dim: int = 32
    clip_bound: float = 0.01
    n_critic: int = 5
    lr: float = 1e-4
    lr_min: float = 5e-6
    max_epochs: int = 3000
    patience: int = 100
    batch_size: int = 64
    time_budget_s: Optional[float] = None
    gbm_mu: float = 0.0
    gbm_sigma: float = 1.0
    garch_omega: float = 0.1
    garch_lambda: float = 0.1
    garch_nu: float = 0.8

    def problems(self) -> list[str]:
        out = []
        if any(f not in ("least_squares", "wasserstein") for f in self.flavors):
            out.append("baselines.flavors must be least_squares and/or wasserstein")
        if not self.clip_bound > 0:
            out.append("baselines.clip_bound must be positive")
        if self.gbm_sigma < 0:
            out.append("baselines.gbm_sigma must be nonnegative")
        if self.garch_lambda + self.garch_nu >= 1:
            out.append("baselines.garch_lambda + garch_nu must be below 1")
        return out


@dataclass
class MetricsConfig:
    grid_trends: list = field(default_factory=lambda: [-10.0, -7.5, -5.0, -2.5, 0.0, 2.5, 5.0, 7.5, 10.0])
    grid_rvs: list = field(default_factory=lambda: [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0])
    per_point: int = 1
    diversity_conditions: list = field(default_factory=lambda: [[10.0, 50.0], [-10.0, 50.0]])
    diversity_samples: int = 200
    stylized_days: int = 1500
    stylized_condition: list = field(default_factory=lambda: [0.0, 1.0])
    hill_tail_frac: float = 0.05

    def problems(self) -> list[str]:
        out = []
        if self.diversity_samples < 2:
            out.append("metrics.diversity_samples must be at least 2")
        if self.stylized_days < 30:
            out.append("metrics.stylized_days must be at least 30")
        if not 0 < self.hill_tail_frac < 1:
            out.append("metrics.hill_tail_frac must lie in (0, 1)")
        return out


@dataclass
class HedgingConfig:
    strike: float = 1.0
    cost_rate: float = 1e-4
    erm_gamma: float = 100.0
    cvar_alpha: float = 0.05
    lr: float = 1e-5
    uptrend_lr: float = 1e-4
    patience: int = 100
    uptrend_patience: int = 1000
    max_epochs: int = 3000
    batch_size: int = 512
    width: int = 64
    per_condition: int = 20
    time_budget_s: Optional[float] = None

    def problems(self) -> list[str]:
        out = []
        if not self.strike > 0:
            out.append("hedging.strike must be positive")
        if self.cost_rate < 0:
            out.append("hedging.cost_rate must be nonnegative")
        if not self.erm_gamma > 0:
            out.append("hedging.erm_gamma must be positive")
        if not 0 < self.cvar_alpha < 1:
            out.append("hedging.cvar_alpha must lie in (0, 1)")
        return out


@dataclass
class GenerateConfig:
    conditions: list = field(default_factory=lambda: [[0.0, 1.0]])
    count: int = 10

    def problems(self) -> list[str]:
        out = [] if self.count >= 1 else ["generate.count must be positive"]
        for c in self.conditions:
            if len(c) != 2 or c[1] < 0:
                out.append(f"generate.conditions entry {c} must be [trend, rv >= 0]")
        return out


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    wavelet: WaveletConfig = field(default_factory=WaveletConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    baselines: BaselinesConfig = field(default_factory=BaselinesConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    hedging: HedgingConfig = field(default_factory=HedgingConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_type(value, hint) -> bool:
    if get_origin(hint) is Optional or type(None) in get_args(hint):
        if value is None:
            return True
        hint = next(a for a in get_args(hint) if a is not type(None))
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, hint)


def _build(cls, raw: Any, prefix: str, problems: list[str]):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        problems.append(f"{prefix or 'config'} must be a mapping")
        return cls()
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            problems.append(f"unknown key {prefix}{key}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in raw:
            continue
        value, hint = raw[f.name], hints[f.name]
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _build(hint, raw[f.name], f"{prefix}{f.name}.", problems)
        elif _check_type(value, hint):
            kwargs[f.name] = float(value) if hint is float else value
        else:
            problems.append(f"{prefix}{f.name}: expected {getattr(hint, '__name__', hint)}, got {type(value).__name__}")
    obj = cls(**kwargs)
    if hasattr(obj, "problems"):
        problems.extend(obj.problems())
    return obj


def config_from_dict(raw: dict | None) -> RunConfig:
    problems: list[str] = []
    cfg = _build(RunConfig, raw or {}, "", problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"unparseable YAML: {exc}"]) from None
    return config_from_dict(raw)


def emit_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
