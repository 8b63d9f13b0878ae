"""Visual-quality-preserving attacks and the PSNR quality guard.

Four attack kinds: rotation (bilinear, configurable out-of-frame fill),
low-level Gaussian blur, texture reduction (edge-preserving bilateral
smoothing), and block-DCT image compression with JPEG-style quantization
tables. Every attack is a pure function of (image, spec, seed): same
inputs, bit-identical outputs. Inputs and outputs are float arrays in
[-1, 1], channel first, shape preserved.

Compression note: quality 100 is a documented exact pass-through; the
lossy path engages for quality < 100, where reconstruction error grows as
quality drops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .errors import ParameterError, ShapeError
from .imutils import from_uint8

ATTACK_KINDS = ("rotation", "blur", "texture_reduction", "jpeg_compression")
PSNR_GUARD_DB = 25.0


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    angle: float = 3.0            # rotation, degrees
    fill_mode: str = "replicate"  # rotation: replicate | reflect | zero
    radius: int = 1               # blur support radius (kernel = 2r + 1)
    sigma: float = 0.5            # blur standard deviation, pixels
    strength: float = 0.2         # texture reduction range sigma on the [-1,1] scale
    quality: int = 85             # compression quality factor
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ParameterError(f"unknown attack kind {self.kind!r}")
        if not -180.0 <= self.angle <= 180.0:
            raise ParameterError(f"rotation angle {self.angle} outside [-180, 180]")
        if self.fill_mode not in ("replicate", "reflect", "zero"):
            raise ParameterError(f"unknown fill mode {self.fill_mode!r}")
        if self.radius < 0:
            raise ParameterError(f"blur radius must be >= 0, got {self.radius}")
        if self.radius > 0 and self.sigma <= 0:
            raise ParameterError(f"blur sigma must be > 0, got {self.sigma}")
        if not 0.0 <= self.strength <= 1.0:
            raise ParameterError(f"smoothing strength {self.strength} outside [0, 1]")
        if not 1 <= self.quality <= 100:
            raise ParameterError(f"quality factor {self.quality} outside [1, 100]")


def default_attacks() -> dict:
    return {
        "rotation": AttackSpec("rotation", angle=3.0),
        "blur": AttackSpec("blur", radius=1, sigma=0.5),
        "texture_reduction": AttackSpec("texture_reduction", strength=0.2),
        "jpeg_compression": AttackSpec("jpeg_compression", quality=85),
    }


def apply_attack(image: np.ndarray, spec: AttackSpec) -> np.ndarray:
    """Attack one (C, H, W) image or a (B, C, H, W) batch."""
    arr = np.asarray(image, dtype=np.float32)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4:
        raise ShapeError(f"expected (C,H,W) or (B,C,H,W), got {arr.shape}")
    fn = {
        "rotation": _rotate,
        "blur": _blur,
        "texture_reduction": _bilateral,
        "jpeg_compression": _compress,
    }[spec.kind]
    out = np.stack([fn(arr[i], spec) for i in range(arr.shape[0])])
    out = np.clip(out, -1.0, 1.0).astype(np.float32)
    return out[0] if single else out


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio over the [-1, 1] range (peak = 2).

    Identical inputs return +inf, the documented "identical images" sentinel.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(4.0 / mse)


def quality_guard(images: np.ndarray, spec: AttackSpec,
                  min_db: float = PSNR_GUARD_DB):
    """Per-image PSNR of the attacked batch against its input.

    Returns (ok, list of PSNRs); ok is True when every image clears min_db.
    """
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    attacked = apply_attack(arr, spec)
    values = [psnr(arr[i], attacked[i]) for i in range(arr.shape[0])]
    return all(v >= min_db for v in values), values


# --- rotation ---------------------------------------------------------------

def _rotate(img: np.ndarray, spec: AttackSpec) -> np.ndarray:
    angle = spec.angle % 360.0
    if angle == 0.0:
        return img.copy()
    if angle % 90.0 == 0.0:
        # grid-aligned rotations are exact; this is the exact-fill path
        return np.rot90(img, k=int(angle // 90), axes=(-2, -1)).copy()
    c, h, w = img.shape
    theta = math.radians(angle)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yc, xc = yy - cy, xx - cx
    # inverse map: rotate output coords by -theta to find source positions
    src_y = cy + yc * math.cos(theta) - xc * math.sin(theta)
    src_x = cx + yc * math.sin(theta) + xc * math.cos(theta)
    return _bilinear_sample(img, src_y, src_x, spec.fill_mode)


def _bilinear_sample(img, src_y, src_x, fill_mode):
    c, h, w = img.shape
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = src_y - y0
    fx = src_x - x0

    def fetch(yi, xi):
        if fill_mode == "replicate":
            return img[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        if fill_mode == "reflect":
            return img[:, _reflect_index(yi, h), _reflect_index(xi, w)]
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = img[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside[None], vals, 0.0)

    top = fetch(y0, x0) * (1 - fx) + fetch(y0, x0 + 1) * fx
    bot = fetch(y0 + 1, x0) * (1 - fx) + fetch(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


def _reflect_index(idx, n):
    period = 2 * n - 2 if n > 1 else 1
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


# --- blur --------------------------------------------------------------------

def _blur(img: np.ndarray, spec: AttackSpec) -> np.ndarray:
    if spec.radius == 0:
        return img.copy()
    d = np.arange(-spec.radius, spec.radius + 1, dtype=np.float64)
    kernel = np.exp(-(d ** 2) / (2.0 * spec.sigma ** 2))
    kernel /= kernel.sum()
    out = _conv1d_axis(img.astype(np.float64), kernel, axis=1)
    out = _conv1d_axis(out, kernel, axis=2)
    return out


def _conv1d_axis(img, kernel, axis):
    r = (kernel.size - 1) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="edge")
    out = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(i, i + img.shape[axis])
        out += kv * padded[tuple(sl)]
    return out


# --- texture reduction (bilateral smoothing) ---------------------------------

_BILATERAL_RADIUS = 2
_BILATERAL_SPATIAL_SIGMA = 1.5


def _bilateral(img: np.ndarray, spec: AttackSpec) -> np.ndarray:
    if spec.strength == 0.0:
        return img.copy()
    r = _BILATERAL_RADIUS
    sig_s, sig_r = _BILATERAL_SPATIAL_SIGMA, spec.strength
    x = img.astype(np.float64)
    padded = np.pad(x, ((0, 0), (r, r), (r, r)), mode="edge")
    h, w = x.shape[1:]
    acc = np.zeros_like(x)
    norm = np.zeros((h, w))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            shifted = padded[:, r + dy:r + dy + h, r + dx:r + dx + w]
            ws = math.exp(-(dy * dy + dx * dx) / (2 * sig_s ** 2))
            range_d2 = np.sum((shifted - x) ** 2, axis=0)
            wgt = ws * np.exp(-range_d2 / (2 * sig_r ** 2))
            acc += shifted * wgt[None]
            norm += wgt
    return acc / norm[None]


# --- block-DCT compression -----------------------------------------------------

_Q_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

_Q_CHROMA = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


def _scaled_table(base: np.ndarray, quality: int) -> np.ndarray:
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((base * s + 50.0) / 100.0), 1, 255)


def _compress(img: np.ndarray, spec: AttackSpec) -> np.ndarray:
    if spec.quality == 100:
        return img.copy()  # documented exact pass-through
    rgb = (np.clip(img, -1, 1).astype(np.float64) + 1.0) / 2.0 * 255.0
    r, g, b = rgb
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b

    qy = _scaled_table(_Q_LUMA, spec.quality)
    qc = _scaled_table(_Q_CHROMA, spec.quality)
    y = _codec_channel(y - 128.0, qy) + 128.0
    cb = _codec_channel(cb - 128.0, qc) + 128.0
    cr = _codec_channel(cr - 128.0, qc) + 128.0

    cbc, crc = cb - 128.0, cr - 128.0
    out = np.stack([
        y + 1.402 * crc,
        y - 0.344136 * cbc - 0.714136 * crc,
        y + 1.772 * cbc,
    ])
    out_u8 = np.floor(np.clip(out, 0, 255) + 0.5).clip(0, 255).astype(np.uint8)
    return from_uint8(out_u8).astype(np.float64)


def _codec_channel(ch: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = ch.shape
    ph = (8 - h % 8) % 8
    pw = (8 - w % 8) % 8
    padded = np.pad(ch, ((0, ph), (0, pw)), mode="edge")
    out = np.empty_like(padded)
    for by in range(0, padded.shape[0], 8):
        for bx in range(0, padded.shape[1], 8):
            block = padded[by:by + 8, bx:bx + 8]
            coef = dctn(block, norm="ortho")
            coef = np.round(coef / table) * table
            out[by:by + 8, bx:bx + 8] = idctn(coef, norm="ortho")
    return out[:h, :w]
