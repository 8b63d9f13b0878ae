"""Synthetic desk-scale training corpus.

Four image families (gradients, blobs, stripes, low-pass textures), all
smooth enough for a small denoiser to learn quickly. The family index
doubles as the class label used to train the desk-scale IS/FID embedder.
"""

from __future__ import annotations

import numpy as np

FAMILY_NAMES = ("gradient", "blobs", "stripes", "texture")


def _coords(resolution):
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    return yy / (resolution - 1), xx / (resolution - 1)


def _gradient(rng, resolution):
    y, x = _coords(resolution)
    theta = rng.uniform(0, 2 * np.pi)
    s = x * np.cos(theta) + y * np.sin(theta)
    s = (s - s.min()) / max(s.max() - s.min(), 1e-9)
    c1, c2 = rng.uniform(-0.9, 0.9, size=(2, 3))
    return c1[:, None, None] + (c2 - c1)[:, None, None] * s[None]


def _blobs(rng, resolution):
    y, x = _coords(resolution)
    img = np.tile(rng.uniform(-0.8, 0.2, size=3)[:, None, None], (1, resolution, resolution))
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        r = rng.uniform(0.1, 0.3)
        blob = np.exp(-(((y - cy) ** 2 + (x - cx) ** 2) / (2 * r * r)))
        color = rng.uniform(-0.9, 0.9, size=3)
        img = img + (color[:, None, None] - img) * blob[None]
    return img


def _stripes(rng, resolution):
    y, x = _coords(resolution)
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(2.0, 6.0)
    phase = rng.uniform(0, 2 * np.pi)
    s = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (x * np.cos(theta) + y * np.sin(theta)) + phase)
    c1, c2 = rng.uniform(-0.9, 0.9, size=(2, 3))
    return c1[:, None, None] + (c2 - c1)[:, None, None] * s[None]


def _texture(rng, resolution):
    noise = rng.standard_normal((3, resolution, resolution))
    f = np.fft.fft2(noise)
    ky = np.fft.fftfreq(resolution)[:, None]
    kx = np.fft.fftfreq(resolution)[None, :]
    lowpass = np.exp(-((kx ** 2 + ky ** 2) / (2 * 0.08 ** 2)))
    smooth = np.fft.ifft2(f * lowpass[None]).real
    smooth = smooth / max(np.abs(smooth).max(), 1e-9)
    base = rng.uniform(-0.5, 0.5, size=3)
    return base[:, None, None] + 0.6 * smooth


_MAKERS = (_gradient, _blobs, _stripes, _texture)


def make_toy_corpus(n: int, resolution: int = 32, seed: int = 0):
    """Returns (images (n, 3, R, R) float32 in [-1, 1], family labels (n,) int64)."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, 3, resolution, resolution), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        fam = i % len(_MAKERS)
        img = _MAKERS[fam](rng, resolution)
        images[i] = np.clip(img, -1.0, 1.0)
        labels[i] = fam
    return images, labels
