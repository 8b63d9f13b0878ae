"""Watermark encoder/decoder: size-preserving conv stacks.

The encoder maps a watermark image to a feature map with the same spatial
size and the same channel count as the generated images, so the feature
map can be added directly onto terminal noise. The decoder maps recovered
terminal noise back to a watermark estimate bounded to [-1, 1].

The encoder output passes through a scaled tanh. Left unbounded, the
reconstruction objective rewards arbitrarily large feature amplitudes
(better signal-to-noise for the decoder) with nothing opposing the growth,
which ruins imperceptibility; the bound caps injection strength
independently of training length.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ShapeError


class WatermarkCodec(nn.Module):
    def __init__(self, channels: int = 3, feature_channels: int = 32,
                 depth: int = 4, resolution: int = 32, encoder_scale: float = 0.5):
        super().__init__()
        self.descriptor = {
            "channels": channels,
            "feature_channels": feature_channels,
            "depth": depth,
            "resolution": resolution,
            "encoder_scale": encoder_scale,
        }
        self.resolution = resolution
        self.encoder_scale = encoder_scale
        self.encoder = _stack(channels, feature_channels, depth)
        self.decoder = _stack(channels, feature_channels, depth)

    def encode(self, w: torch.Tensor) -> torch.Tensor:
        """Watermark image -> injectable feature map (same shape)."""
        self._check_resolution(w, "encode")
        squeeze = w.ndim == 3
        h = w[None] if squeeze else w
        h = self.encoder_scale * torch.tanh(self.encoder(h))
        return h[0] if squeeze else h

    def decode(self, noise: torch.Tensor) -> torch.Tensor:
        """Recovered terminal noise -> watermark estimate in [-1, 1]."""
        self._check_resolution(noise, "decode")
        squeeze = noise.ndim == 3
        h = noise[None] if squeeze else noise
        h = torch.tanh(self.decoder(h))
        return h[0] if squeeze else h

    def _check_resolution(self, x: torch.Tensor, op: str):
        if x.shape[-1] != self.resolution or x.shape[-2] != self.resolution:
            raise ShapeError(
                f"{op}: input spatial size {tuple(x.shape[-2:])} does not match "
                f"codec resolution {self.resolution}"
            )


def _stack(boundary_channels: int, feature_channels: int, depth: int) -> nn.Sequential:
    """Size-preserving conv stack: boundary -> features -> ... -> boundary."""
    layers = []
    ch = boundary_channels
    for i in range(depth):
        out = boundary_channels if i == depth - 1 else feature_channels
        layers.append(nn.Conv2d(ch, out, 3, padding=1))
        if i < depth - 1:
            layers.append(nn.ReLU())
        ch = out
    return nn.Sequential(*layers)


def build_codec(descriptor: dict | None = None, seed: int = 0) -> WatermarkCodec:
    descriptor = dict(descriptor or {})
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return WatermarkCodec(**descriptor)


def encode(w: torch.Tensor, codec: WatermarkCodec) -> torch.Tensor:
    return codec.encode(w)


def decode(noise: torch.Tensor, codec: WatermarkCodec) -> torch.Tensor:
    return codec.decode(noise)


def inject(w_T: torch.Tensor, x_T: torch.Tensor, strength: float = 1.0) -> torch.Tensor:
    """Additive watermark injection: strength * w_T + x_T (w_T broadcast over batch)."""
    if w_T.shape[-3:] != x_T.shape[-3:]:
        raise ShapeError(
            f"inject: watermark features {tuple(w_T.shape)} do not broadcast "
            f"against noise {tuple(x_T.shape)}"
        )
    return strength * w_T + x_T


def reconstruction_loss(w: torch.Tensor, w_R: torch.Tensor) -> torch.Tensor:
    """Mean squared error between watermark and its reconstruction."""
    if tuple(w.shape) != tuple(w_R.shape):
        raise ShapeError(f"reconstruction_loss: {tuple(w.shape)} vs {tuple(w_R.shape)}")
    return torch.mean((w - w_R) ** 2)
