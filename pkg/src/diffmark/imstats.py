"""Image statistics, set-quality scores, and the difference report.

The ten per-image statistics cover texture (GLCM contrast/energy, texture
strength), edges (Canny edge percentage, edge orientation histogram,
sharpness), focus/frequency (Laplacian variance, mean spectrum), and
color/information content (saturation, entropy). Exact definitions are
pinned below; the test suite holds an independent naive-loop
implementation of each, so every vectorized form here must match it
bit for bit (or to 1e-9 for floating accumulations).

Pinned conventions, shared via imutils:
  grayscale  BT.601 weights on [0,1] channels, scaled to 0-255
  quantized  floor(y + 0.5) to uint8 (GLCM, entropy)
  GLCM       distance 1, horizontal offset, symmetric, normalized, 256 levels
  canny      gaussian sigma 1.0 radius 2, Sobel, 4-sector NMS (border pixels
             never edges), double threshold (100, 200) on raw magnitude,
             8-connected hysteresis; statistic = edge-pixel percentage
  blur       variance of the 3x3 Laplacian [[0,1,0],[1,-4,1],[0,1,0]], valid
  spectrum   mean |centered 2-D DFT| of 0-255 grayscale
  edge hist  non-overlapping 16x16 tiles, 4 orientation bins over [0, 180)
             from central differences on the tile interior, magnitude
             weighted; statistic = count of tiles with a nonzero dominant bin
  entropy    Shannon entropy (bits) of the 256-bin grayscale histogram
  sharpness  sum of squared forward differences (both axes) of 0-255 gray
  saturation mean of 255 * (max - min) / max over RGB in [0,1]; 0 where max=0
  texture    mean population std over all valid 3x3 grayscale windows
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DataError, ParameterError, ShapeError
from .imutils import gray255, gray_u8, to_unit

STAT_KINDS = (
    "glcm_contrast",
    "glcm_energy",
    "canny_edge",
    "variance_blur",
    "mean_spectrum",
    "edge_histogram",
    "entropy",
    "sharpness",
    "saturation",
    "texture_strength",
)


def compute_statistic(image: np.ndarray, kind: str) -> float:
    """One statistic for a (C, H, W) image, or the batch mean for (B, C, H, W)."""
    if kind not in STAT_KINDS:
        raise ParameterError(f"unsupported statistic kind {kind!r}")
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 4:
        return float(np.mean([_STATS[kind](arr[i]) for i in range(arr.shape[0])]))
    if arr.ndim != 3:
        raise ShapeError(f"expected (C,H,W) or (B,C,H,W), got {arr.shape}")
    return float(_STATS[kind](arr))


# --- GLCM --------------------------------------------------------------------

def _glcm_matrix(q: np.ndarray) -> np.ndarray:
    """Symmetric normalized co-occurrence matrix, horizontal offset 1."""
    a = q[:, :-1].astype(np.int64).ravel()
    b = q[:, 1:].astype(np.int64).ravel()
    if a.size == 0:
        raise DataError("image too narrow for a distance-1 GLCM")
    counts = np.bincount(a * 256 + b, minlength=256 * 256).reshape(256, 256)
    counts = counts + counts.T
    return counts / counts.sum()


def _glcm_contrast(img):
    p = _glcm_matrix(gray_u8(img))
    i = np.arange(256, dtype=np.float64)
    return float(np.sum(p * (i[:, None] - i[None, :]) ** 2))


def _glcm_energy(img):
    p = _glcm_matrix(gray_u8(img))
    return float(np.sum(p * p))


# --- Canny edge percentage -----------------------------------------------------

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.float64)


def _conv2_replicate(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = (kernel.shape[0] - 1) // 2
    padded = np.pad(img, r, mode="edge")
    out = np.zeros_like(img)
    for dy in range(kernel.shape[0]):
        for dx in range(kernel.shape[1]):
            out += kernel[dy, dx] * padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out


def _gaussian_kernel2(sigma: float, radius: int) -> np.ndarray:
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k1 = np.exp(-(d ** 2) / (2 * sigma ** 2))
    k2 = np.outer(k1, k1)
    return k2 / k2.sum()

def _canny_edges(gray: np.ndarray, low: float = 100.0, high: float = 200.0) -> np.ndarray:
    smooth = _conv2_replicate(gray, _gaussian_kernel2(1.0, 2))
    gx = _conv2_replicate(smooth, _SOBEL_X)
    gy = _conv2_replicate(smooth, _SOBEL_Y)
    mag = np.hypot(gx, gy)
    h, w = gray.shape
    # non-maximum suppression over 4 quantized directions; borders never edges
    keep = np.zeros_like(mag, dtype=bool)
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = ((angle + 22.5) // 45.0).astype(np.int64) % 4
    offs = {0: (0, 1), 1: (-1, 1), 2: (-1, 0), 3: (-1, -1)}
    for s, (dy, dx) in offs.items():
        m = sector == s
        m[0, :] = m[-1, :] = False
        m[:, 0] = m[:, -1] = False
        if not m.any():
            continue
        ys, xs = np.nonzero(m)
        v = mag[ys, xs]
        keep_s = (v >= mag[ys + dy, xs + dx]) & (v >= mag[ys - dy, xs - dx])
        keep[ys[keep_s], xs[keep_s]] = True
    strong = keep & (mag >= high)
    weak = keep & (mag >= low) & (mag < high)
    # hysteresis: weak pixels 8-connected to strong survive
    edges = strong.copy()
    frontier = strong
    while frontier.any():
        grow = np.zeros_like(edges)
        ys, xs = np.nonzero(frontier)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny = np.clip(ys + dy, 0, h - 1)
                nx = np.clip(xs + dx, 0, w - 1)
                grow[ny, nx] = True
        frontier = grow & weak & ~edges
        edges |= frontier
    return edges


def _canny_edge(img):
    edges = _canny_edges(gray255(img))
    return 100.0 * float(edges.sum()) / edges.size


# --- focus / frequency ----------------------------------------------------------

_LAPLACIAN = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)


def _variance_blur(img):
    g = gray255(img)
    if g.shape[0] < 3 or g.shape[1] < 3:
        return 0.0
    resp = np.zeros((g.shape[0] - 2, g.shape[1] - 2))
    for dy in range(3):
        for dx in range(3):
            resp += _LAPLACIAN[dy, dx] * g[dy:dy + resp.shape[0], dx:dx + resp.shape[1]]
    return float(np.var(resp))


def _mean_spectrum(img):
    g = gray255(img)
    return float(np.mean(np.abs(np.fft.fftshift(np.fft.fft2(g)))))


# --- edge orientation histogram ---------------------------------------------------

_TILE = 16


def _edge_histogram(img):
    g = gray255(img)
    h, w = g.shape
    count = 0
    for ty in range(0, h - _TILE + 1, _TILE):
        for tx in range(0, w - _TILE + 1, _TILE):
            tile = g[ty:ty + _TILE, tx:tx + _TILE]
            gx = (tile[1:-1, 2:] - tile[1:-1, :-2]) / 2.0
            gy = (tile[2:, 1:-1] - tile[:-2, 1:-1]) / 2.0
            mag = np.hypot(gx, gy)
            if mag.sum() == 0.0:
                continue
            theta = np.mod(np.arctan2(gy, gx), np.pi)
            bins = np.minimum((theta / (np.pi / 4)).astype(np.int64), 3)
            hist = np.bincount(bins.ravel(), weights=mag.ravel(), minlength=4)
            if hist[int(np.argmax(hist))] > 0:
                count += 1
    return float(count)


# --- information / gradient energy ---------------------------------------------

def _entropy(img):
    q = gray_u8(img)
    p = np.bincount(q.ravel(), minlength=256) / q.size
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def _sharpness(img):
    g = gray255(img)
    dx = g[:, 1:] - g[:, :-1]
    dy = g[1:, :] - g[:-1, :]
    return float(np.sum(dx ** 2) + np.sum(dy ** 2))


def _saturation(img):
    if img.shape[0] < 3:
        return 0.0
    unit = to_unit(img[:3])
    mx = unit.max(axis=0)
    mn = unit.min(axis=0)
    s = np.where(mx > 0, (mx - mn) / np.where(mx > 0, mx, 1.0), 0.0)
    return float(np.mean(s) * 255.0)


def _texture_strength(img):
    g = gray255(img)
    if g.shape[0] < 3 or g.shape[1] < 3:
        return 0.0
    h, w = g.shape[0] - 2, g.shape[1] - 2
    windows = np.empty((9, h, w))
    k = 0
    for dy in range(3):
        for dx in range(3):
            windows[k] = g[dy:dy + h, dx:dx + w]
            k += 1
    return float(np.mean(windows.std(axis=0)))


_STATS = {
    "glcm_contrast": _glcm_contrast,
    "glcm_energy": _glcm_energy,
    "canny_edge": _canny_edge,
    "variance_blur": _variance_blur,
    "mean_spectrum": _mean_spectrum,
    "edge_histogram": _edge_histogram,
    "entropy": _entropy,
    "sharpness": _sharpness,
    "saturation": _saturation,
    "texture_strength": _texture_strength,
}


# --- set-quality scores ------------------------------------------------------------

def inception_score(images: np.ndarray, embedder) -> float:
    """exp of the mean KL divergence between per-image class distributions
    and their marginal."""
    images = np.asarray(images)
    if images.shape[0] == 0:
        raise DataError("inception_score needs a nonempty image set")
    probs = np.asarray(embedder.probabilities(images), dtype=np.float64)
    marginal = probs.mean(axis=0)
    eps = 1e-12
    kl = np.sum(probs * (np.log(probs + eps) - np.log(marginal + eps)), axis=1)
    return float(np.exp(kl.mean()))


def fid(set_a: np.ndarray, set_b: np.ndarray, embedder) -> float:
    """Frechet distance between Gaussian fits of the two embedded sets."""
    set_a, set_b = np.asarray(set_a), np.asarray(set_b)
    if set_a.shape[0] == 0 or set_b.shape[0] == 0:
        raise DataError("fid needs two nonempty image sets")
    fa = np.asarray(embedder.features(set_a), dtype=np.float64)
    fb = np.asarray(embedder.features(set_b), dtype=np.float64)
    if fa.shape[1] != fb.shape[1]:
        raise DataError(f"embedding dimensions differ: {fa.shape[1]} vs {fb.shape[1]}")
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = _cov(fa)
    cov_b = _cov(fb)
    covmean = scipy.linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    d2 = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a + cov_b - 2.0 * covmean))
    return max(d2, 0.0)


def _cov(f: np.ndarray) -> np.ndarray:
    if f.shape[0] == 1:
        return np.zeros((f.shape[1], f.shape[1]))
    return np.cov(f, rowvar=False)


class ArrayEmbedder:
    """Embedder returning precomputed rows; for oracles and tests."""

    def __init__(self, probabilities: np.ndarray | None = None,
                 features: np.ndarray | None = None):
        self._p = None if probabilities is None else np.asarray(probabilities, dtype=np.float64)
        self._f = None if features is None else np.asarray(features, dtype=np.float64)

    def probabilities(self, images):
        if self._p is None or len(images) != len(self._p):
            raise DataError("ArrayEmbedder: probabilities missing or length mismatch")
        return self._p

    def features(self, images):
        if self._f is None or len(images) != len(self._f):
            raise DataError("ArrayEmbedder: features missing or length mismatch")
        return self._f


# --- difference report --------------------------------------------------------------

@dataclass
class StatsReport:
    resolution: int
    kinds: tuple
    wm_means: dict = field(default_factory=dict)
    clean_means: dict = field(default_factory=dict)
    diff_percent: dict = field(default_factory=dict)

    def as_table(self) -> str:
        head = f"{'statistic':<18}{'watermarked':>14}{'clean':>14}{'difference':>12}"
        lines = [head, "-" * len(head)]
        for k in self.kinds:
            d = self.diff_percent[k]
            dtxt = "inf" if math.isinf(d) else f"{d:.2f}%"
            lines.append(f"{k:<18}{self.wm_means[k]:>14.4f}{self.clean_means[k]:>14.4f}"
                         f"{dtxt:>12}")
        lines.append(f"resolution: {self.resolution} x {self.resolution}")
        return "\n".join(lines)

    def as_delimited(self, sep: str = "\t") -> str:
        lines = [sep.join(["statistic", "watermarked", "clean", "difference_percent"])]
        for k in self.kinds:
            lines.append(sep.join([
                k, f"{self.wm_means[k]:.6f}", f"{self.clean_means[k]:.6f}",
                f"{self.diff_percent[k]:.2f}",
            ]))
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({
            "resolution": self.resolution,
            "kinds": list(self.kinds),
            "watermarked": self.wm_means,
            "clean": self.clean_means,
            "difference_percent": self.diff_percent,
        })


def percentage_difference(wm_mean: float, clean_mean: float) -> float:
    """|wm - clean| / clean * 100 with the clean mean as denominator.

    Zero clean mean gives 0.00% when the watermarked mean is also zero,
    else +inf.
    """
    if clean_mean == 0.0:
        return 0.0 if wm_mean == 0.0 else float("inf")
    return abs(wm_mean - clean_mean) / abs(clean_mean) * 100.0


def diff_report(wm_set: np.ndarray, clean_set: np.ndarray,
                kinds: tuple = STAT_KINDS) -> StatsReport:
    """Per-kind means for two image sets and their percentage difference."""
    wm_set = np.asarray(wm_set, dtype=np.float32)
    clean_set = np.asarray(clean_set, dtype=np.float32)
    if wm_set.shape[0] == 0 or clean_set.shape[0] == 0:
        raise DataError("diff_report needs two nonempty image sets")
    if wm_set.shape[1:] != clean_set.shape[1:]:
        raise DataError(f"resolution mismatch: {wm_set.shape[1:]} vs {clean_set.shape[1:]}")
    unknown = [k for k in kinds if k not in STAT_KINDS]
    if unknown:
        raise ParameterError(f"unsupported statistic kinds: {unknown}")
    report = StatsReport(resolution=int(wm_set.shape[-1]), kinds=tuple(kinds))
    for k in kinds:
        wm = compute_statistic(wm_set, k)
        cl = compute_statistic(clean_set, k)
        report.wm_means[k] = wm
        report.clean_means[k] = cl
        report.diff_percent[k] = percentage_difference(wm, cl)
    return report
