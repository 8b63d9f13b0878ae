"""Pixel-scale conversions shared by IO, statistics, and attacks.

Images travel through the package as float arrays in [-1, 1], channel
first. Storage and the statistics operate on the 8-bit / 0-255 scale; the
conversions below are the single definition of that mapping so that
round trips and the brute-force statistic oracles are bit-exact.

Grayscale uses the BT.601 luminance weights (0.299, 0.587, 0.114) on the
[0, 1] channel scale, then multiplies by 255. Quantization is
round-half-up: floor(y + 0.5), clipped to [0, 255].
"""

from __future__ import annotations

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def to_uint8(x: np.ndarray) -> np.ndarray:
    """[-1, 1] float -> uint8, round-half-up."""
    y = (np.clip(x, -1.0, 1.0) + 1.0) / 2.0 * 255.0
    return np.floor(y + 0.5).clip(0, 255).astype(np.uint8)


def from_uint8(u: np.ndarray) -> np.ndarray:
    """uint8 -> [-1, 1] float32."""
    return (u.astype(np.float32) / 255.0) * 2.0 - 1.0


def to_unit(x: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 1], clipped."""
    return (np.clip(x, -1.0, 1.0) + 1.0) / 2.0


def gray255(image: np.ndarray) -> np.ndarray:
    """(C, H, W) in [-1, 1] -> float luminance on the 0-255 scale (H, W)."""
    unit = to_unit(np.asarray(image, dtype=np.float64))
    if unit.ndim == 2:
        return unit * 255.0
    r, g, b = LUMA_WEIGHTS
    if unit.shape[0] == 1:
        return unit[0] * 255.0
    return (r * unit[0] + g * unit[1] + b * unit[2]) * 255.0


def gray_u8(image: np.ndarray) -> np.ndarray:
    """Quantized 8-bit luminance (H, W) uint8."""
    y = gray255(image)
    return np.floor(y + 0.5).clip(0, 255).astype(np.uint8)
