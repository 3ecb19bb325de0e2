"""Noise-prediction network: a small U-Net whose coarse levels cross-attend to
condition tokens built from (trend, realized volatility)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
import torch.nn.functional as F


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 20
    channel_mult: tuple[int, ...] = (1, 2, 4)
    attention_heads: int = 4
    attention_levels: tuple[int, ...] = (1, 2)
    res_blocks: int = 2
    cond_embed_dim: int = 32
    cond_tokens: int = 4
    time_embed_dim: int = 64
    groups: int = 4
    image_shape: tuple[int, int] = (152, 16)

    def __post_init__(self):
        depth = len(self.channel_mult)
        step = 2 ** (depth - 1)
        if any(s % step for s in self.image_shape):
            raise ValueError(f"image shape {self.image_shape} must be divisible by {step}")
        for m in self.channel_mult:
            c = self.base_channels * m
            if c % self.attention_heads or c % self.groups:
                raise ValueError(f"channel width {c} must divide by heads and norm groups")

    @property
    def depth(self) -> int:
        return len(self.channel_mult)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def step_embedding(k: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = k.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    return emb.to(torch.get_default_dtype())


class ConditionEmbedding(nn.Module):
    """(trend, rv) -> cond_tokens x cond_embed_dim.

    Each rescaled scalar gets its own affine lift to cond_embed_dim; a 1-D
    convolution then mixes the two lifted tokens into cond_tokens outputs.
    Rows flagged in ``null`` are replaced by a learned constant token matrix.
    """

    def __init__(self, cfg: DenoiserConfig, scale=(1.0, 1.0)):
        super().__init__()
        d = cfg.cond_embed_dim
        self.lift_weight = nn.Parameter(torch.randn(2, d))
        self.lift_bias = nn.Parameter(torch.randn(2, d) * 0.1)
        self.mix = nn.Conv1d(2, cfg.cond_tokens, kernel_size=3, padding=1)
        self.out = nn.Linear(d, d)
        self.null_tokens = nn.Parameter(torch.randn(cfg.cond_tokens, d) * 0.1)
        self.register_buffer("scale", torch.as_tensor(scale, dtype=torch.get_default_dtype()))

    def forward(self, cond: torch.Tensor, null: torch.Tensor | None = None) -> torch.Tensor:
        if not torch.isfinite(cond).all():
            raise ValueError("condition values must be finite")
        c = cond / self.scale
        lifted = F.silu(c[..., None] * self.lift_weight + self.lift_bias)  # (B, 2, d)
        tokens = self.out(F.silu(self.mix(lifted)))  # (B, n_tok, d)
        if null is not None:
            tokens = torch.where(null[:, None, None], self.null_tokens.expand_as(tokens), tokens)
        return tokens


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, temb: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(temb, cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, t):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(t)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Image features are queries; condition tokens supply keys and values."""

    def __init__(self, channels: int, cond_dim: int, heads: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.attn = nn.MultiheadAttention(channels, heads, kdim=cond_dim, vdim=cond_dim, batch_first=True)

    def forward(self, x, tokens):
        B, C, H, W = x.shape
        q = self.norm(x).flatten(2).transpose(1, 2)
        h, _ = self.attn(q, tokens, tokens, need_weights=False)
        return x + h.transpose(1, 2).reshape(B, C, H, W)


class UNet(nn.Module):
    def __init__(self, cfg: DenoiserConfig = DenoiserConfig(), cond_scale=(1.0, 1.0)):
        super().__init__()
        self.cfg = cfg
        g, temb = cfg.groups, cfg.time_embed_dim
        widths = [cfg.base_channels * m for m in cfg.channel_mult]
        self.cond = ConditionEmbedding(cfg, cond_scale)
        self.time = nn.Sequential(nn.Linear(temb, temb), nn.SiLU(), nn.Linear(temb, temb))
        self.conv_in = nn.Conv2d(1, widths[0], 3, padding=1)

        self.down = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsample = nn.ModuleList()
        skips = [widths[0]]
        c = widths[0]
        for lvl, w in enumerate(widths):
            blocks, attns = nn.ModuleList(), nn.ModuleList()
            for _ in range(cfg.res_blocks):
                blocks.append(ResBlock(c, w, temb, g))
                attns.append(self._attn(lvl, w))
                c = w
                skips.append(c)
            self.down.append(blocks)
            self.down_attn.append(attns)
            if lvl < cfg.depth - 1:
                self.downsample.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
                skips.append(c)

        self.mid1 = ResBlock(c, c, temb, g)
        self.mid_attn = CrossAttention(c, cfg.cond_embed_dim, cfg.attention_heads, g)
        self.mid2 = ResBlock(c, c, temb, g)

        self.up = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for lvl in reversed(range(cfg.depth)):
            w = widths[lvl]
            blocks, attns = nn.ModuleList(), nn.ModuleList()
            for _ in range(cfg.res_blocks + 1):
                blocks.append(ResBlock(c + skips.pop(), w, temb, g))
                attns.append(self._attn(lvl, w))
                c = w
            self.up.append(blocks)
            self.up_attn.append(attns)
            if lvl > 0:
                self.upsample.append(nn.Conv2d(c, c, 3, padding=1))

        self.norm_out = nn.GroupNorm(g, c)
        self.conv_out = nn.Conv2d(c, 1, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)
        # NHWC convolutions run noticeably faster on CPU
        self.to(memory_format=torch.channels_last)

    def _attn(self, lvl: int, w: int) -> nn.Module:
        cfg = self.cfg
        if lvl in cfg.attention_levels:
            return CrossAttention(w, cfg.cond_embed_dim, cfg.attention_heads, cfg.groups)
        return nn.Identity()

    def embed_conditions(self, cond: torch.Tensor, null: torch.Tensor | None = None) -> torch.Tensor:
        return self.cond(cond, null)

    def forward(self, x: torch.Tensor, k: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        if x.shape[1:] != (1, *self.cfg.image_shape):
            raise ValueError(f"expected images of shape (B, 1, {self.cfg.image_shape}), got {tuple(x.shape)}")
        t = self.time(step_embedding(k, self.cfg.time_embed_dim).to(x.dtype))
        h = self.conv_in(x)
        hs = [h]
        for lvl, (blocks, attns) in enumerate(zip(self.down, self.down_attn)):
            for block, attn in zip(blocks, attns):
                h = block(h, t)
                h = attn(h, tokens) if isinstance(attn, CrossAttention) else h
                hs.append(h)
            if lvl < self.cfg.depth - 1:
                h = self.downsample[lvl](h)
                hs.append(h)
        h = self.mid2(self.mid_attn(self.mid1(h, t), tokens), t)
        for i, (blocks, attns) in enumerate(zip(self.up, self.up_attn)):
            for block, attn in zip(blocks, attns):
                h = block(torch.cat([h, hs.pop()], dim=1), t)
                h = attn(h, tokens) if isinstance(attn, CrossAttention) else h
            if i < len(self.upsample):
                h = self.upsample[i](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.conv_out(F.silu(self.norm_out(h)))
