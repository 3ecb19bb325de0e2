"""Forward noising process: beta schedule and the closed-form / one-step kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    variance: str = "beta"  # or "posterior"

    def __post_init__(self):
        b = self.beta
        if b.ndim != 1 or len(b) < 1:
            raise ValueError("beta must be a non-empty 1-D array")
        if not (b[0] > 0 and b[-1] < 1 and np.all(np.diff(b) > 0 if len(b) > 1 else True)):
            raise ValueError("beta must be strictly increasing inside (0, 1)")
        if self.variance not in ("beta", "posterior"):
            raise ValueError(f"unknown sampler variance {self.variance!r}")

    @property
    def K(self) -> int:
        return len(self.beta)

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alpha)

    @property
    def sampler_sigma(self) -> np.ndarray:
        """Reverse-step standard deviation sigma_k, indexed k-1."""
        if self.variance == "beta":
            return np.sqrt(self.beta)
        ab_prev = np.concatenate([[1.0], self.alpha_bar[:-1]])
        return np.sqrt(self.beta * (1.0 - ab_prev) / (1.0 - self.alpha_bar))

    def to_dict(self) -> dict:
        return {"K": self.K, "beta_start": float(self.beta[0]), "beta_end": float(self.beta[-1]),
                "variance": self.variance}

    def check_step(self, k) -> None:
        k = np.asarray(k)
        if np.any(k < 1) or np.any(k > self.K):
            raise ValueError(f"diffusion step must lie in 1..{self.K}")


def make_schedule(K: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                  variance: str = "beta") -> NoiseSchedule:
    if K < 1:
        raise ValueError("K must be positive")
    if not 0 < beta_start < 1 or not 0 < beta_end < 1:
        raise ValueError("beta bounds must lie in (0, 1)")
    if K > 1 and not beta_start < beta_end:
        raise ValueError("beta_start must be below beta_end")
    beta = np.array([beta_start]) if K == 1 else np.linspace(beta_start, beta_end, K)
    return NoiseSchedule(beta, variance)


def _per_sample(values: np.ndarray, k, like: torch.Tensor) -> torch.Tensor:
    k = torch.as_tensor(k, dtype=torch.long)
    out = torch.as_tensor(values, dtype=like.dtype)[k - 1]
    return out.reshape(out.shape + (1,) * (like.dim() - out.dim()))


def q_sample(x0, k, noise, sched: NoiseSchedule):
    """sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) noise; k may be per-sample."""
    sched.check_step(k)
    if isinstance(x0, np.ndarray):
        ab = sched.alpha_bar[np.asarray(k) - 1]
        ab = np.reshape(ab, np.shape(ab) + (1,) * (x0.ndim - np.ndim(ab)))
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise
    ab = _per_sample(sched.alpha_bar, k, x0)
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise


def q_step(x_prev, k: int, noise, sched: NoiseSchedule):
    """One forward transition x_k ~ N(sqrt(alpha_k) x_{k-1}, beta_k I)."""
    sched.check_step(k)
    return np.sqrt(sched.alpha[k - 1]) * x_prev + np.sqrt(sched.beta[k - 1]) * noise
