"""The watermark bank: the fixed set of candidate watermark images.

Four watermarks (two intended per model kind), each a bold geometric
pattern with its own color tint. Patterns are standardized to equal
per-pixel energy so that a noise-like decoder output sits roughly
equidistant from every entry, which is what makes the no-watermark margin
test meaningful.

A bank lives either inside a checkpoint or as a directory of lossless
PNG files plus an index mapping id -> file and resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParameterError, ShapeError
from .imutils import from_uint8, to_uint8

BANK_INDEX_NAME = "bank_index.json"
DEFAULT_BANK_SIZE = 4


@dataclass(frozen=True)
class WatermarkImage:
    pixels: np.ndarray  # (3, H, W) float32 in [-1, 1]
    watermark_id: int
    resolution: int

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[-1] != self.resolution \
                or self.pixels.shape[-2] != self.resolution:
            raise ShapeError(
                f"watermark {self.watermark_id}: pixels {self.pixels.shape} do not "
                f"match resolution {self.resolution}"
            )


def _grid(resolution: int):
    c = (resolution - 1) / 2.0
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    return (yy - c) / resolution, (xx - c) / resolution


def _pattern(index: int, resolution: int) -> np.ndarray:
    y, x = _grid(resolution)
    if index == 0:    # filled disc
        mask = (x * x + y * y) <= 0.32 ** 2
    elif index == 1:  # plus sign
        mask = (np.abs(x) <= 0.09) | (np.abs(y) <= 0.09)
    elif index == 2:  # diagonal stripes
        mask = np.floor((x + y) * 4.0) % 2 == 0
    elif index == 3:  # checkerboard
        mask = (np.floor(x * 4.0) + np.floor(y * 4.0)) % 2 == 0
    else:
        raise ParameterError(f"no default pattern for watermark id {index}")
    p = np.where(mask, 1.0, -1.0)
    p = (p - p.mean()) / max(p.std(), 1e-9)
    return p


_TINTS = (
    (0.70, 0.35, 0.00),
    (0.00, 0.70, 0.35),
    (0.35, 0.00, 0.70),
    (0.452, 0.452, 0.452),
)


def default_bank(resolution: int, size: int = DEFAULT_BANK_SIZE) -> list[WatermarkImage]:
    """Deterministic synthetic bank; values pre-quantized to the 8-bit grid."""
    if size < 1 or size > len(_TINTS):
        raise ParameterError(f"bank size must be in [1, {len(_TINTS)}], got {size}")
    bank = []
    for i in range(size):
        p = _pattern(i, resolution)
        w = np.stack([t * p for t in _TINTS[i]]).clip(-0.95, 0.95)
        w = from_uint8(to_uint8(w))
        bank.append(WatermarkImage(w.astype(np.float32), i, resolution))
    return bank


def save_bank(bank: list[WatermarkImage], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for wm in bank:
        name = f"wm{wm.watermark_id}.png"
        arr = to_uint8(wm.pixels).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(out_dir / name)
        entries.append({"id": wm.watermark_id, "file": name, "resolution": wm.resolution})
    index = {"version": 1, "entries": entries}
    (out_dir / BANK_INDEX_NAME).write_text(json.dumps(index, indent=2))
    return out_dir / BANK_INDEX_NAME


def load_bank(bank_dir) -> list[WatermarkImage]:
    bank_dir = Path(bank_dir)
    index = json.loads((bank_dir / BANK_INDEX_NAME).read_text())
    bank = []
    for entry in sorted(index["entries"], key=lambda e: e["id"]):
        with Image.open(bank_dir / entry["file"]) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8).transpose(2, 0, 1)
        bank.append(WatermarkImage(from_uint8(arr), int(entry["id"]), int(entry["resolution"])))
    return bank


def bank_array(bank: list[WatermarkImage]) -> np.ndarray:
    """(N, 3, H, W) float32 stack in id order."""
    if not bank:
        raise ParameterError("watermark bank is empty")
    return np.stack([wm.pixels for wm in sorted(bank, key=lambda w: w.watermark_id)])
