"""Noise-prediction network: a compact U-Net with timestep conditioning.

Topology per descriptor: a stem conv, one residual stage per resolution
level (channel widths base * mults), self-attention at the lowest
resolution and in the mid block, then a mirrored decoder with skip
concatenation. Downsampling is average pooling, upsampling is
nearest-neighbor, both followed by a conv; all convs are 3x3 stride 1.

Timesteps enter through a sinusoidal embedding fed to a small MLP whose
output is projected into every residual block. Output shape always equals
input shape; evaluation is deterministic.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos positional features for integer timesteps (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
    )
    args = t.float().reshape(-1, 1) * freqs.reshape(1, -1)
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention(nn.Module):
    """Single-head attention over spatial positions."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = _norm(channels)
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / math.sqrt(c), dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.proj(out)


class UNetDenoiser(nn.Module):
    def __init__(
        self,
        in_channels: int = 3,
        base_channels: int = 32,
        channel_mults: tuple = (1, 2, 4),
        num_res_blocks: int = 1,
        time_dim: int = 128,
    ):
        super().__init__()
        self.descriptor = {
            "in_channels": in_channels,
            "base_channels": base_channels,
            "channel_mults": list(channel_mults),
            "num_res_blocks": num_res_blocks,
            "time_dim": time_dim,
        }
        widths = [base_channels * m for m in channel_mults]
        lowest = len(widths) - 1

        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.stem = nn.Conv2d(in_channels, widths[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        ch = widths[0]
        for level, w in enumerate(widths):
            blocks = nn.ModuleList(
                [ResBlock(ch if i == 0 else w, w, time_dim) for i in range(num_res_blocks)]
            )
            self.down_blocks.append(blocks)
            self.down_attn.append(SelfAttention(w) if level == lowest else nn.Identity())
            ch = w
            if level < lowest:
                self.downsamples.append(
                    nn.Sequential(nn.AvgPool2d(2), nn.Conv2d(w, widths[level + 1], 3, padding=1))
                )
                ch = widths[level + 1]

        self.mid1 = ResBlock(widths[-1], widths[-1], time_dim)
        self.mid_attn = SelfAttention(widths[-1])
        self.mid2 = ResBlock(widths[-1], widths[-1], time_dim)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for level in range(lowest, -1, -1):
            w = widths[level]
            blocks = nn.ModuleList(
                [ResBlock(w * 2 if i == 0 else w, w, time_dim) for i in range(num_res_blocks)]
            )
            self.up_blocks.append(blocks)
            if level > 0:
                self.upsamples.append(
                    nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                  nn.Conv2d(w, widths[level - 1], 3, padding=1))
                )

        self.out_norm = _norm(widths[0])
        self.out_conv = nn.Conv2d(widths[0], in_channels, 3, padding=1)
        # number of completed optimizer steps; loaded checkpoints restore it
        self.register_buffer("train_steps", torch.zeros((), dtype=torch.int64))

    def mark_trained(self, steps: int = 1):
        self.train_steps += int(steps)

    def forward(self, x: torch.Tensor, t) -> torch.Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if isinstance(t, int):
            t = torch.full((x.shape[0],), t, dtype=torch.int64)
        temb = self.time_mlp(sinusoidal_embedding(t, self.descriptor["time_dim"]))

        h = self.stem(x)
        skips = []
        for level, blocks in enumerate(self.down_blocks):
            for blk in blocks:
                h = blk(h, temb)
            h = self.down_attn[level](h)
            skips.append(h)
            if level < len(self.downsamples):
                h = self.downsamples[level](h)

        h = self.mid2(self.mid_attn(self.mid1(h, temb)), temb)

        for i, blocks in enumerate(self.up_blocks):
            h = torch.cat([h, skips[-(i + 1)]], dim=1)
            for blk in blocks:
                h = blk(h, temb)
            if i < len(self.upsamples):
                h = self.upsamples[i](h)

        out = self.out_conv(torch.nn.functional.silu(self.out_norm(h)))
        return out[0] if squeeze else out


def build_denoiser(descriptor: dict | None = None, seed: int = 0) -> UNetDenoiser:
    """Construct a denoiser with deterministic initialization from a seed."""
    descriptor = dict(descriptor or {})
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return UNetDenoiser(**descriptor)
