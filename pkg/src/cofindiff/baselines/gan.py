"""Conditional adversarial baselines on flat standardized return vectors.

Two flavours: least-squares loss ("vanilla") and Wasserstein with critic
weight clipping. Conditions are concatenated to the latent code and to the
critic input.
"""
from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from cofindiff.checkpoint import CheckpointCorruption, load_checkpoint, save_checkpoint
from cofindiff.diffusion.sampling import sample_seed
from cofindiff.diffusion.training import condition_scale
from cofindiff.market_data import ConditionPair, DatasetSplit, StandardizationStats, conditions_from_returns, standardize

logger = logging.getLogger(__name__)

KIND = "cofindiff-gan"
FLAVORS = ("least_squares", "wasserstein")


@dataclass(frozen=True)
class GanConfig:
    flavor: str = "least_squares"
    latent_dim: int = 32
    generator_widths: tuple[int, ...] = (256, 256)
    critic_widths: tuple[int, ...] = (256, 256)
    clip_bound: float = 0.01
    n_critic: int = 1  # critic updates per generator update; 5 is customary for wasserstein
    length: int = 300

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"flavor must be one of {FLAVORS}")
        if self.flavor == "wasserstein" and not self.clip_bound > 0:
            raise ValueError("wasserstein critic needs a positive clip bound")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class GanControl:
    max_epochs: int = 3000
    lr: float = 1e-4
    lr_min: float = 5e-6
    patience: int = 100
    batch_size: int = 64
    seed: int = 0
    time_budget_s: float | None = None


def _mlp(d_in: int, widths, d_out: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    for w in widths:
        layers += [nn.Linear(d_in, w), nn.LeakyReLU(0.2)]
        d_in = w
    layers.append(nn.Linear(d_in, d_out))
    return nn.Sequential(*layers)


class Generator(nn.Module):
    def __init__(self, cfg: GanConfig, cond_scale=(1.0, 1.0)):
        super().__init__()
        self.cfg = cfg
        self.body = _mlp(cfg.latent_dim + 2, cfg.generator_widths, cfg.length)
        self.register_buffer("cond_scale", torch.as_tensor(cond_scale, dtype=torch.float32))

    def forward(self, z, cond):
        return self.body(torch.cat([z, cond / self.cond_scale], dim=1))


class Critic(nn.Module):
    def __init__(self, cfg: GanConfig, cond_scale=(1.0, 1.0)):
        super().__init__()
        self.body = _mlp(cfg.length + 2, cfg.critic_widths, 1)
        self.register_buffer("cond_scale", torch.as_tensor(cond_scale, dtype=torch.float32))

    def forward(self, x, cond):
        return self.body(torch.cat([x, cond / self.cond_scale], dim=1)).squeeze(1)


@dataclass
class GanModel:
    generator: Generator
    stats: StandardizationStats
    seed: int = 0

    @property
    def cfg(self) -> GanConfig:
        return self.generator.cfg

    def save(self, directory):
        header = {"kind": KIND, "flavor": self.cfg.flavor, "length": self.cfg.length}
        meta = {"config": self.cfg.to_dict(), "stats": self.stats.to_dict(),
                "cond_scale": self.generator.cond_scale.tolist(), "seed": self.seed}
        return save_checkpoint(directory, self.generator.state_dict(), header, meta)

    @classmethod
    def load(cls, directory) -> "GanModel":
        state, meta = load_checkpoint(directory)
        if meta["header"].get("kind") != KIND:
            raise CheckpointCorruption(f"not a GAN checkpoint: {meta['header'].get('kind')}")
        cfg = GanConfig.from_dict(meta["config"])
        if cfg.flavor != meta["header"]["flavor"] or cfg.length != meta["header"]["length"]:
            raise CheckpointCorruption("GAN config disagrees with weight header")
        g = Generator(cfg, tuple(meta["cond_scale"]))
        g.load_state_dict(state)
        g.eval()
        return cls(g, StandardizationStats(**meta["stats"]), int(meta["seed"]))


@torch.no_grad()
def gan_generate_batch(model: GanModel, conds, count: int, seed: int = 0) -> np.ndarray:
    """Scaled returns, shape (n_conds, count, T); sample (i, j) depends only on (seed, i, j)."""
    conds = [c.as_tuple() if isinstance(c, ConditionPair) else tuple(c) for c in conds]
    z = np.stack([np.random.default_rng(sample_seed(seed, i, j)).standard_normal(model.cfg.latent_dim)
                  for i in range(len(conds)) for j in range(count)])
    c = np.repeat(np.asarray(conds, dtype=float), count, axis=0)
    model.generator.eval()
    x = model.generator(torch.as_tensor(z, dtype=torch.float32), torch.as_tensor(c, dtype=torch.float32))
    r = model.stats.invert(x.double().numpy())
    return r.reshape(len(conds), count, -1)


def gan_generate(model: GanModel, cond: ConditionPair, count: int, seed: int = 0):
    """(returns, realized conditions) for one requested condition."""
    r = gan_generate_batch(model, [cond], count, seed)[0]
    trend, rv = conditions_from_returns(r)
    return r, [ConditionPair(float(m), float(v)) for m, v in zip(trend, rv)]


def as_generator(model: GanModel):
    def generator(conds, count, seed):
        return gan_generate_batch(model, conds, count, seed)
    return generator


class GanDivergence(RuntimeError):
    pass


@dataclass
class GanTrainState:
    model: GanModel
    critic: Critic
    epoch: int = 0
    best_val: float = math.inf
    best_epoch: int = -1
    history: list[dict] = field(default_factory=list)


def _condition_proxy(model: GanModel, conds: np.ndarray, seed: int) -> float:
    """Scale-free mean absolute condition error on one sample per validation condition."""
    r = gan_generate_batch(model, conds, 1, seed)[:, 0]
    trend, rv = conditions_from_returns(r)
    scale = model.generator.cond_scale.double().numpy()
    return float(np.mean(np.abs(trend - conds[:, 0]) / scale[0] + np.abs(rv - conds[:, 1]) / scale[1]))


def train_cgan(split: DatasetSplit, cfg: GanConfig = GanConfig(), ctl: GanControl = GanControl()) -> GanTrainState:
    if not split.train:
        raise ValueError("GAN training needs a non-empty training split")
    torch.manual_seed(ctl.seed)
    rng = np.random.default_rng(ctl.seed)
    stats = split.stats or standardize([d for d, _ in split.train])[0]
    x = torch.as_tensor(stats.apply(np.stack([d.scaled_returns for d, _ in split.train])), dtype=torch.float32)
    c = torch.as_tensor(np.array([cc.as_tuple() for _, cc in split.train]), dtype=torch.float32)
    if x.shape[1] != cfg.length:
        raise ValueError(f"series length {x.shape[1]} differs from config length {cfg.length}")
    val_source = split.val or split.train
    val_conds = np.array([cc.as_tuple() for _, cc in val_source])
    scale = condition_scale(c)
    gen, critic = Generator(cfg, scale), Critic(cfg, scale)
    model = GanModel(gen, stats, ctl.seed)
    if cfg.flavor == "wasserstein":
        opt_g = torch.optim.RMSprop(gen.parameters(), lr=ctl.lr)
        opt_d = torch.optim.RMSprop(critic.parameters(), lr=ctl.lr)
    else:
        opt_g = torch.optim.Adam(gen.parameters(), lr=ctl.lr, betas=(0.5, 0.999))
        opt_d = torch.optim.Adam(critic.parameters(), lr=ctl.lr, betas=(0.5, 0.999))
    state = GanTrainState(model, critic)
    index = np.repeat(np.arange(len(x)), split.multiplicities)
    best = copy.deepcopy(gen.state_dict())
    stale = 0
    started = time.monotonic()
    for epoch in range(ctl.max_epochs):
        lr = ctl.lr_min + 0.5 * (ctl.lr - ctl.lr_min) * (1 + math.cos(math.pi * epoch / ctl.max_epochs))
        for opt in (opt_g, opt_d):
            for group in opt.param_groups:
                group["lr"] = lr
        order = rng.permutation(index)
        d_losses, g_losses = [], []
        for step, s in enumerate(range(0, len(order), ctl.batch_size)):
            b = torch.as_tensor(order[s:s + ctl.batch_size])
            real, cond = x[b], c[b]
            fake = gen(torch.randn(len(b), cfg.latent_dim), cond)
            if cfg.flavor == "wasserstein":
                d_loss = critic(fake.detach(), cond).mean() - critic(real, cond).mean()
            else:
                d_loss = 0.5 * ((critic(real, cond) - 1) ** 2).mean() + 0.5 * (critic(fake.detach(), cond) ** 2).mean()
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()
            if cfg.flavor == "wasserstein":
                with torch.no_grad():
                    for p in critic.parameters():
                        p.clamp_(-cfg.clip_bound, cfg.clip_bound)
            d_losses.append(d_loss.item())
            if step % cfg.n_critic:
                continue
            out = critic(gen(torch.randn(len(b), cfg.latent_dim), cond), cond)
            g_loss = -out.mean() if cfg.flavor == "wasserstein" else 0.5 * ((out - 1) ** 2).mean()
            opt_g.zero_grad(set_to_none=True)
            g_loss.backward()
            opt_g.step()
            g_losses.append(g_loss.item())
            if not (math.isfinite(d_loss.item()) and math.isfinite(g_loss.item())):
                raise GanDivergence(f"non-finite GAN losses at epoch {epoch}: critic {d_loss.item()}, "
                                    f"generator {g_loss.item()}")
        val = _condition_proxy(model, val_conds, ctl.seed + 1)
        gen.train()
        state.history.append({"epoch": epoch, "critic_loss": float(np.mean(d_losses)),
                              "generator_loss": float(np.mean(g_losses)) if g_losses else None, "val_proxy": val})
        state.epoch = epoch + 1
        if val < state.best_val:
            state.best_val, state.best_epoch, stale = val, epoch, 0
            best = copy.deepcopy(gen.state_dict())
        else:
            stale += 1
            if stale >= ctl.patience:
                break
        if ctl.time_budget_s is not None and time.monotonic() - started > ctl.time_budget_s:
            break
    gen.load_state_dict(best)
    gen.eval()
    return state
