"""Generation from a trained checkpoint, watermark extraction, and matching.

Generation draws terminal noise, adds the checkpoint's encoded watermark,
and runs the reverse process (deterministic grid for ddim-kind, ancestral
for ddpm-kind). Extraction maps an image back to terminal noise
(deterministic inversion by default), decodes a watermark estimate, and
scores it against every bank entry by mean squared error. An image is
flagged "no watermark" when the margin between best and second-best score
is small relative to the best score, which is how noise-like decodes on
clean images are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .bank import WatermarkImage, bank_array
from .checkpoint import Checkpoint
from .diffusion import ddim_invert, ddim_sample, ddpm_sample, q_sample
from .errors import ParameterError, ShapeError, StateError
from .imutils import to_uint8

# "no watermark" when (second_best - best) < threshold * best
DEFAULT_MATCH_THRESHOLD = 0.10


@dataclass
class ExtractionResult:
    reconstructed: np.ndarray          # (3, H, W) watermark estimate
    scores: dict                       # id -> MSE against that bank entry
    best_id: int
    confidence: float                  # margin between best and second-best MSE
    no_watermark: bool

    def to_record(self) -> dict:
        return {
            "best_id": self.best_id,
            "confidence": self.confidence,
            "no_watermark": self.no_watermark,
            "scores": {str(k): v for k, v in self.scores.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())


def generate_watermarked(checkpoint: Checkpoint, n: int, seed: int = 0) -> np.ndarray:
    """Generate n images from the checkpoint; (n, 3, H, W) float32 in [-1, 1]."""
    if n < 0:
        raise ParameterError(f"n must be >= 0, got {n}")
    if checkpoint.train_steps == 0:
        raise StateError("checkpoint has never been trained")
    res = checkpoint.resolution
    if n == 0:
        return np.empty((0, 3, res, res), dtype=np.float32)

    gen = torch.Generator().manual_seed(seed)
    x = torch.randn((n, 3, res, res), generator=gen)
    if checkpoint.is_watermarked:
        wm = _bank_entry(checkpoint, checkpoint.watermark_id)
        with torch.no_grad():
            w_feat = checkpoint.codec.encode(torch.from_numpy(wm.pixels))
        x = checkpoint.gamma * w_feat[None] + x

    if checkpoint.kind == "ddpm":
        out = ddpm_sample(x, checkpoint.denoiser, checkpoint.schedule, gen,
                          clamp_x0=checkpoint.clamp_x0,
                          clamp_bound=checkpoint.clamp_bound)
    else:
        out = ddim_sample(x, checkpoint.denoiser, checkpoint.schedule,
                          checkpoint.sample_steps,
                          clamp_x0=checkpoint.clamp_x0,
                          clamp_bound=checkpoint.clamp_bound)
    return out.clamp(-1.0, 1.0).numpy().astype(np.float32)


def extract_watermark(image: np.ndarray, checkpoint: Checkpoint,
                      threshold: float = DEFAULT_MATCH_THRESHOLD,
                      seed: int = 0):
    """Recover terminal noise from an image and score the decoded watermark.

    Accepts a single (3, H, W) image (returns ExtractionResult) or a
    (B, 3, H, W) batch (returns a list). The default deterministic
    inversion ignores `seed`; the fixed-t q-sample ablation mode uses it.
    """
    arr = np.asarray(image, dtype=np.float32)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    res = checkpoint.resolution
    if arr.ndim != 4 or arr.shape[2] != res or arr.shape[3] != res:
        raise ShapeError(f"image batch {arr.shape} does not match checkpoint "
                         f"resolution {res}")

    x = torch.from_numpy(arr)
    if checkpoint.extraction_mode == "qsample":
        gen = torch.Generator().manual_seed(seed)
        eps = torch.randn(x.shape, generator=gen)
        noise = q_sample(x, checkpoint.extraction_fixed_t, eps, checkpoint.schedule)
    else:
        # mirror the generator's stabilization so the recovered noise
        # approximates the preimage of the map that produced the image
        noise = ddim_invert(x, checkpoint.denoiser, checkpoint.schedule,
                            checkpoint.sample_steps,
                            clamp_x0=checkpoint.clamp_x0,
                            clamp_bound=checkpoint.clamp_bound)
    with torch.no_grad():
        w_rec = checkpoint.codec.decode(noise).numpy()

    results = [
        _score_against_bank(w_rec[i], checkpoint.bank, threshold)
        for i in range(w_rec.shape[0])
    ]
    return results[0] if single else results


def match_watermark(w_R, bank: list[WatermarkImage]):
    """Nearest-MSE bank entry: (id, confidence margin). Ties -> lowest id."""
    if not bank:
        raise ParameterError("watermark bank is empty")
    pixels = np.asarray(w_R, dtype=np.float32)
    stack = bank_array(bank)
    if pixels.shape != stack.shape[1:]:
        raise ShapeError(f"watermark {pixels.shape} vs bank entries {stack.shape[1:]}")
    mses = np.mean((stack - pixels[None]) ** 2, axis=(1, 2, 3))
    ids = sorted(w.watermark_id for w in bank)
    best = int(np.argmin(mses))
    if len(bank) == 1:
        return ids[best], float("inf")  # unbounded margin: nothing to compare against
    order = np.sort(mses)
    return ids[best], float(order[1] - order[0])


def _score_against_bank(w_rec: np.ndarray, bank: list[WatermarkImage],
                        threshold: float) -> ExtractionResult:
    if not bank:
        raise ParameterError("checkpoint carries no watermark bank")
    stack = bank_array(bank)
    ids = sorted(w.watermark_id for w in bank)
    mses = np.mean((stack - w_rec[None]) ** 2, axis=(1, 2, 3))
    best_idx = int(np.argmin(mses))
    if len(bank) == 1:
        margin = float("inf")
        flagged = False
    else:
        order = np.sort(mses)
        margin = float(order[1] - order[0])
        flagged = margin < threshold * float(order[0])
    return ExtractionResult(
        reconstructed=w_rec,
        scores={ids[i]: float(mses[i]) for i in range(len(ids))},
        best_id=ids[best_idx],
        confidence=margin,
        no_watermark=flagged,
    )


def _bank_entry(checkpoint: Checkpoint, wid: int) -> WatermarkImage:
    for wm in checkpoint.bank:
        if wm.watermark_id == wid:
            return wm
    raise ParameterError(f"watermark id {wid} not present in checkpoint bank")


def save_generated(images: np.ndarray, out_dir, checkpoint: Checkpoint,
                   seed: int, start_index: int = 0) -> list[Path]:
    """Write images as PNGs named {kind}_{label}_s{seed}_{index}.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    label = "clean" if not checkpoint.is_watermarked else f"wm{checkpoint.watermark_id}"
    paths = []
    for i in range(images.shape[0]):
        name = f"{checkpoint.kind}_{label}_s{seed}_{start_index + i:04d}.png"
        arr = to_uint8(images[i]).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(out_dir / name)
        paths.append(out_dir / name)
    return paths
