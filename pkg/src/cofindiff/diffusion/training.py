"""Epsilon-prediction training with condition dropout, cosine LR decay and early stopping."""
from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from cofindiff.diffusion.denoiser import DenoiserConfig, UNet
from cofindiff.diffusion.model import DiffusionModel
from cofindiff.diffusion.schedule import NoiseSchedule, make_schedule, q_sample
from cofindiff.market_data import DatasetSplit, StandardizationStats, standardize
from cofindiff.wavelet import ImageLayout, encode

logger = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class TrainControl:
    max_epochs: int = 3000
    lr: float = 1e-4
    lr_min: float = 5e-6
    patience: int = 100
    batch_size: int = 64
    p_uncond: float = 0.1
    seed: int = 0
    steps_per_epoch: int | None = None  # None: one pass over the upsampled training set
    time_budget_s: float | None = None
    val_draws: int = 1  # noise draws per validation image


def cosine_lr(epoch: int, ctl: TrainControl) -> float:
    frac = min(epoch / max(ctl.max_epochs, 1), 1.0)
    return ctl.lr_min + 0.5 * (ctl.lr - ctl.lr_min) * (1 + math.cos(math.pi * frac))


class EarlyStopping:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.counter = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record a validation value; True when training should stop."""
        if value < self.best:
            self.best, self.best_epoch, self.counter = value, epoch, 0
        else:
            self.counter += 1
        return self.counter >= self.patience


@dataclass
class TrainState:
    model: DiffusionModel
    optimizer: torch.optim.Optimizer
    epoch: int = 0
    best_val: float = math.inf
    best_epoch: int = -1
    stale_epochs: int = 0
    lr: float = 0.0
    seed: int = 0
    history: list[dict] = field(default_factory=list)
    stopped_early: bool = False


def dataset_tensors(split: DatasetSplit, layout: ImageLayout, stats: StandardizationStats, part: str):
    items = getattr(split, part)
    returns = np.stack([d.scaled_returns for d, _ in items])
    images = encode(stats.apply(returns), layout.shape).values
    conds = np.array([c.as_tuple() for _, c in items])
    return torch.as_tensor(images[:, None], dtype=torch.get_default_dtype()), torch.as_tensor(conds)


def condition_scale(conds: torch.Tensor) -> tuple[float, float]:
    """Per-column std of training conditions; 1.0 where it is degenerate (e.g. a single day)."""
    std = conds.double().std(dim=0, correction=0)
    return tuple(float(s) if s > 1e-8 else 1.0 for s in std)


def eps_loss(net: UNet, sched: NoiseSchedule, x0, conds, k, noise, null=None) -> torch.Tensor:
    """Unit-weight mean squared noise-prediction error."""
    x_k = q_sample(x0, k, noise, sched)
    tokens = net.embed_conditions(conds.to(x0.dtype), null)
    return F.mse_loss(net(x_k, k, tokens), noise)


def _fixed_draws(n: int, shape, sched: NoiseSchedule, seed: int, dtype):
    g = torch.Generator().manual_seed(seed)
    k = torch.randint(1, sched.K + 1, (n,), generator=g)
    noise = torch.randn((n, *shape), generator=g, dtype=dtype)
    return k, noise


@torch.no_grad()
def validation_loss(net: UNet, sched: NoiseSchedule, x0, conds, k, noise, batch: int = 256) -> float:
    net.eval()
    total = 0.0
    for s in range(0, len(x0), batch):
        sl = slice(s, s + batch)
        total += eps_loss(net, sched, x0[sl], conds[sl], k[sl], noise[sl]).item() * len(x0[sl])
    net.train()
    return total / len(x0)


def train(split: DatasetSplit, sched: NoiseSchedule | None = None, cfg: DenoiserConfig | None = None,
          ctl: TrainControl | None = None) -> TrainState:
    sched = sched or make_schedule()
    cfg = cfg or DenoiserConfig()
    ctl = ctl or TrainControl()
    if not split.train or not split.val:
        raise ValueError("training needs non-empty train and val splits")
    torch.manual_seed(ctl.seed)
    stats = split.stats or standardize([d for d, _ in split.train])[0]
    T = split.train[0][0].T
    layout = ImageLayout.for_length(T, cfg.image_shape)

    x_train, c_train = dataset_tensors(split, layout, stats, "train")
    x_val, c_val = dataset_tensors(split, layout, stats, "val")
    cond_scale = condition_scale(c_train)
    net = UNet(cfg, cond_scale)
    model = DiffusionModel(net, sched, layout, stats, ctl.seed)
    opt = torch.optim.Adam(net.parameters(), lr=ctl.lr)
    state = TrainState(model, opt, lr=ctl.lr, seed=ctl.seed)

    reps = max(ctl.val_draws, 1)
    x_val, c_val = x_val.repeat(reps, 1, 1, 1), c_val.repeat(reps, 1)
    k_val, n_val = _fixed_draws(len(x_val), x_val.shape[1:], sched, ctl.seed + 1, x_val.dtype)

    index = np.repeat(np.arange(len(x_train)), split.multiplicities)
    rng = np.random.default_rng(ctl.seed)
    g = torch.Generator().manual_seed(ctl.seed)
    stopper = EarlyStopping(ctl.patience)
    best_weights = copy.deepcopy(net.state_dict())
    started = time.monotonic()
    net.train()
    for epoch in range(ctl.max_epochs):
        lr = cosine_lr(epoch, ctl)
        for group in opt.param_groups:
            group["lr"] = lr
        order = rng.permutation(index)
        if ctl.steps_per_epoch is not None:
            order = np.resize(order, ctl.steps_per_epoch * ctl.batch_size)
        losses = []
        for s in range(0, len(order), ctl.batch_size):
            b = torch.as_tensor(order[s:s + ctl.batch_size])
            x0, c = x_train[b], c_train[b]
            k = torch.randint(1, sched.K + 1, (len(b),), generator=g)
            noise = torch.randn(x0.shape, generator=g, dtype=x0.dtype)
            null = torch.rand(len(b), generator=g) < ctl.p_uncond
            loss = eps_loss(net, sched, x0, c, k, noise, null)
            if not torch.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss {loss.item()} at epoch {epoch}, step {s // ctl.batch_size}, "
                                         f"lr {lr:.3g}, diffusion steps {k.tolist()[:8]}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val = validation_loss(net, sched, x_val, c_val, k_val, n_val)
        stop = stopper.update(epoch, val)
        if stopper.best_epoch == epoch:
            best_weights = copy.deepcopy(net.state_dict())
        state.epoch, state.lr = epoch + 1, lr
        state.best_val, state.best_epoch, state.stale_epochs = stopper.best, stopper.best_epoch, stopper.counter
        state.history.append({"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)), "val_loss": val})
        logger.info("epoch %d lr %.2e train %.4f val %.4f", epoch, lr, np.mean(losses), val)
        if stop:
            state.stopped_early = True
            break
        if ctl.time_budget_s is not None and time.monotonic() - started > ctl.time_budget_s:
            logger.info("time budget reached after %d epochs", epoch + 1)
            break
    net.load_state_dict(best_weights)
    net.eval()
    return state
