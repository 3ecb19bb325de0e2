"""Trained conditional diffusion model: network + schedule + data transforms, and its checkpoint."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from cofindiff.checkpoint import CheckpointCorruption, load_checkpoint, save_checkpoint
from cofindiff.diffusion.denoiser import DenoiserConfig, UNet
from cofindiff.diffusion.schedule import NoiseSchedule, make_schedule
from cofindiff.market_data import ConditionPair, StandardizationStats
from cofindiff.wavelet import ImageLayout

KIND = "cofindiff-diffusion"


@dataclass
class DiffusionModel:
    net: UNet
    schedule: NoiseSchedule
    layout: ImageLayout
    stats: StandardizationStats
    seed: int = 0

    @property
    def cond_scale(self) -> tuple[float, float]:
        return tuple(float(v) for v in self.net.cond.scale)

    def tokens(self, conds, null=None) -> torch.Tensor:
        c = torch.as_tensor(np.asarray(conds, dtype=float), dtype=self.dtype).reshape(-1, 2)
        if null is not None:
            null = torch.as_tensor(null, dtype=torch.bool).reshape(-1)
        return self.net.embed_conditions(c, null)

    def null_tokens(self, n: int) -> torch.Tensor:
        return self.tokens(np.zeros((n, 2)), np.ones(n, dtype=bool))

    @property
    def dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    def metadata(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "config": self.net.cfg.to_dict(),
            "stats": self.stats.to_dict(),
            "cond_scale": list(self.cond_scale),
            "layout": self.layout.to_dict(),
            "seed": self.seed,
        }

    def save(self, directory):
        header = {"kind": KIND, "K": self.schedule.K, "image_shape": list(self.net.cfg.image_shape)}
        return save_checkpoint(directory, self.net.state_dict(), header, self.metadata())

    @classmethod
    def load(cls, directory) -> "DiffusionModel":
        state, meta = load_checkpoint(directory)
        header = meta["header"]
        if header.get("kind") != KIND:
            raise CheckpointCorruption(f"not a diffusion checkpoint: {header.get('kind')}")
        sched_meta = meta["schedule"]
        if sched_meta["K"] != header["K"]:
            raise CheckpointCorruption(f"schedule K={sched_meta['K']} but weight header K={header['K']}")
        cfg = DenoiserConfig.from_dict(meta["config"])
        if list(cfg.image_shape) != header["image_shape"]:
            raise CheckpointCorruption("image shape in config disagrees with weight header")
        net = UNet(cfg, tuple(meta["cond_scale"]))
        net.load_state_dict(state)
        net.eval()
        sched = make_schedule(sched_meta["K"], sched_meta["beta_start"], sched_meta["beta_end"],
                              sched_meta["variance"])
        return cls(net, sched, ImageLayout.from_dict(meta["layout"]),
                   StandardizationStats(**meta["stats"]), int(meta["seed"]))


def condition_array(conds) -> np.ndarray:
    return np.array([c.as_tuple() if isinstance(c, ConditionPair) else tuple(c) for c in conds], dtype=float)
