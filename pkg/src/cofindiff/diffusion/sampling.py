"""Classifier-free-guided ancestral sampling and series generation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from cofindiff.diffusion.model import DiffusionModel, condition_array
from cofindiff.diffusion.schedule import NoiseSchedule
from cofindiff.market_data import ConditionPair, conditions_from_returns
from cofindiff.wavelet import WaveletImage, decode


@dataclass
class GenerationRequest:
    condition: ConditionPair
    gamma: float = 1.0
    count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be at least 1")


def cfg_eps(net, x_k: torch.Tensor, k: torch.Tensor, cond_tokens: torch.Tensor,
            null_tokens: torch.Tensor | None, gamma: float) -> torch.Tensor:
    """gamma * eps(x | cond) + (1 - gamma) * eps(x | null).

    gamma == 1 and gamma == 0 evaluate a single branch only.
    """
    if gamma == 1:
        return net(x_k, k, cond_tokens)
    eps_null = net(x_k, k, null_tokens)
    if gamma == 0:
        return eps_null
    return gamma * net(x_k, k, cond_tokens) + (1 - gamma) * eps_null


def sample_seed(seed: int, *stream: int) -> int:
    return int(np.random.SeedSequence([seed, *stream]).generate_state(1, dtype=np.uint64)[0] >> 1)


class NoiseStreams:
    """One torch generator per sample, so a sample's noise never depends on batch composition."""

    def __init__(self, seeds: Sequence[int], shape: tuple[int, ...], dtype=torch.float32):
        self.gens = [torch.Generator().manual_seed(s) for s in seeds]
        self.shape = shape
        self.dtype = dtype

    def draw(self) -> torch.Tensor:
        return torch.stack([torch.randn(self.shape, generator=g, dtype=self.dtype) for g in self.gens])


@torch.no_grad()
def ancestral_sample(eps_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor], sched: NoiseSchedule,
                     noise: NoiseStreams, x_K: torch.Tensor | None = None) -> torch.Tensor:
    """x_{k-1} = (x_k - beta_k / sqrt(1 - alpha_bar_k) * eps) / sqrt(alpha_k) + sigma_k z, z = 0 at k = 1."""
    x = noise.draw() if x_K is None else x_K
    inv_sqrt_alpha = 1.0 / np.sqrt(sched.alpha)
    eps_coef = sched.beta / np.sqrt(1.0 - sched.alpha_bar)
    sigma = sched.sampler_sigma
    for k in range(sched.K, 0, -1):
        kk = torch.full((x.shape[0],), k, dtype=torch.long)
        eps = eps_fn(x, kk)
        x = inv_sqrt_alpha[k - 1] * (x - eps_coef[k - 1] * eps)
        if k > 1:
            x = x + sigma[k - 1] * noise.draw()
    return x


@torch.no_grad()
def sample_images(model: DiffusionModel, conds, count: int, seed: int = 0, gamma: float = 1.0,
                  batch_size: int = 256) -> np.ndarray:
    """Images for every (condition, replicate) pair, shape (n_conds, count, rows, cols)."""
    if model is None:
        raise ValueError("no trained model supplied")
    c = condition_array(conds)
    n = len(c)
    jobs = [(i, j) for i in range(n) for j in range(count)]
    shape = (1, *model.layout.shape)
    out = np.empty((n, count, *model.layout.shape))
    model.net.eval()
    for s in range(0, len(jobs), batch_size):
        chunk = jobs[s:s + batch_size]
        cond_tokens = model.tokens(c[[i for i, _ in chunk]])
        null_tokens = model.null_tokens(len(chunk)) if gamma != 1 else None
        streams = NoiseStreams([sample_seed(seed, i, j) for i, j in chunk], shape, model.dtype)
        x = ancestral_sample(lambda x, k: cfg_eps(model.net, x, k, cond_tokens, null_tokens, gamma),
                             model.schedule, streams)
        for (i, j), img in zip(chunk, x[:, 0].double().numpy()):
            out[i, j] = img
    return out


def sample_image(req: GenerationRequest, model: DiffusionModel) -> list[WaveletImage]:
    imgs = sample_images(model, [req.condition], req.count, req.seed, req.gamma)[0]
    return [WaveletImage(v, model.layout) for v in imgs]


@dataclass
class GenerationResult:
    requested: list[ConditionPair]
    returns: np.ndarray  # (n_conds, count, T) scaled returns
    realized: list[list[ConditionPair]] = field(default_factory=list)

    def manifest(self) -> dict:
        return {"samples": [
            {"requested": list(req.as_tuple()), "realized": [list(c.as_tuple()) for c in real]}
            for req, real in zip(self.requested, self.realized)]}

    def write_csv(self, path) -> None:
        np.savetxt(path, self.returns.reshape(-1, self.returns.shape[-1]), delimiter=",", fmt="%.10g")


def images_to_returns(model: DiffusionModel, images: np.ndarray) -> np.ndarray:
    return model.stats.invert(decode(images, model.layout))


def generate_batch(model: DiffusionModel, conds: Sequence[ConditionPair], count: int, seed: int = 0,
                   gamma: float = 1.0) -> GenerationResult:
    conds = [c if isinstance(c, ConditionPair) else ConditionPair(*c) for c in conds]
    r = images_to_returns(model, sample_images(model, conds, count, seed, gamma))
    trend, rv = conditions_from_returns(r)
    realized = [[ConditionPair(float(m), float(v)) for m, v in zip(tr, rr)] for tr, rr in zip(trend, rv)]
    return GenerationResult(conds, r, realized)


def generate_series(req: GenerationRequest, model: DiffusionModel) -> GenerationResult:
    return generate_batch(model, [req.condition], req.count, req.seed, req.gamma)


def as_generator(model: DiffusionModel, gamma: float = 1.0):
    """Adapter to the metrics generator interface."""
    def generator(conds, count, seed):
        return generate_batch(model, conds, count, seed, gamma).returns
    return generator
