"""Versioned binary container for trained models.

A container is an .npz archive whose `__header__` entry is a JSON text
header (format version, creation metadata, topology descriptors); the
remaining entries are named parameter arrays. Diffusion checkpoints and
detector heads share the same container format.

Diffusion checkpoints are self-contained: schedule betas, denoiser and
codec parameters, the watermark bank, and the generation/extraction
settings all travel together.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .bank import WatermarkImage, bank_array
from .codec import WatermarkCodec, build_codec
from .errors import ParameterError
from .schedule import NoiseSchedule, schedule_from_betas
from .unet import UNetDenoiser, build_denoiser

FORMAT_VERSION = 1


def save_container(path, header: dict, arrays: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = dict(header)
    header.setdefault("format_version", FORMAT_VERSION)
    header.setdefault("created", time.strftime("%Y-%m-%dT%H:%M:%S"))
    payload = {"__header__": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    payload.update(arrays)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    path.write_bytes(buf.getvalue())
    return path


def load_container(path) -> tuple[dict, dict]:
    path = Path(path)
    with np.load(path) as data:
        if "__header__" not in data:
            raise ParameterError(f"not a diffmark container (no header): {path}")
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise ParameterError(
                f"unsupported container format version {header.get('format_version')!r}"
            )
        arrays = {k: data[k] for k in data.files if k != "__header__"}
    return header, arrays


def _state_arrays(module: torch.nn.Module, prefix: str) -> dict:
    return {f"{prefix}.{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def _load_state(module: torch.nn.Module, arrays: dict, prefix: str):
    state = {}
    for key, value in arrays.items():
        if key.startswith(prefix + "."):
            state[key[len(prefix) + 1:]] = torch.from_numpy(np.array(value))
    module.load_state_dict(state)


@dataclass
class Checkpoint:
    denoiser: UNetDenoiser
    codec: WatermarkCodec
    schedule: NoiseSchedule
    kind: str = "ddim"
    resolution: int = 32
    watermark_id: int | None = None
    gamma: float = 1.0
    sample_steps: int = 50
    extraction_mode: str = "ddim-invert"
    extraction_fixed_t: int = 0
    seed: int = 0
    bank: list[WatermarkImage] = field(default_factory=list)
    created: str = ""
    clamp_x0: bool = True
    clamp_bound: float = 1.0

    @property
    def train_steps(self) -> int:
        return int(self.denoiser.train_steps)

    @property
    def is_watermarked(self) -> bool:
        return self.watermark_id is not None


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    header = {
        "container": "diffusion-checkpoint",
        "kind": ckpt.kind,
        "resolution": ckpt.resolution,
        "watermark_id": ckpt.watermark_id,
        "gamma": ckpt.gamma,
        "sample_steps": ckpt.sample_steps,
        "extraction_mode": ckpt.extraction_mode,
        "extraction_fixed_t": ckpt.extraction_fixed_t,
        "seed": ckpt.seed,
        "clamp_x0": ckpt.clamp_x0,
        "clamp_bound": ckpt.clamp_bound,
        "denoiser_descriptor": ckpt.denoiser.descriptor,
        "codec_descriptor": ckpt.codec.descriptor,
        "bank_ids": [w.watermark_id for w in ckpt.bank],
    }
    arrays = {"schedule_betas": ckpt.schedule.betas}
    if ckpt.bank:
        arrays["bank_images"] = bank_array(ckpt.bank)
    arrays.update(_state_arrays(ckpt.denoiser, "denoiser"))
    arrays.update(_state_arrays(ckpt.codec, "codec"))
    return save_container(path, header, arrays)


def load_checkpoint(path) -> Checkpoint:
    header, arrays = load_container(path)
    if header.get("container") != "diffusion-checkpoint":
        raise ParameterError(f"container at {path} is {header.get('container')!r}, "
                             "expected 'diffusion-checkpoint'")
    denoiser = build_denoiser(header["denoiser_descriptor"])
    _load_state(denoiser, arrays, "denoiser")
    codec = build_codec(header["codec_descriptor"])
    _load_state(codec, arrays, "codec")
    denoiser.eval()
    codec.eval()
    bank = []
    if "bank_images" in arrays:
        res = int(arrays["bank_images"].shape[-1])
        for i, wid in enumerate(header["bank_ids"]):
            bank.append(WatermarkImage(arrays["bank_images"][i], int(wid), res))
    return Checkpoint(
        denoiser=denoiser,
        codec=codec,
        schedule=schedule_from_betas(arrays["schedule_betas"]),
        kind=header["kind"],
        resolution=int(header["resolution"]),
        watermark_id=header["watermark_id"],
        gamma=float(header["gamma"]),
        sample_steps=int(header["sample_steps"]),
        extraction_mode=header["extraction_mode"],
        extraction_fixed_t=int(header["extraction_fixed_t"]),
        seed=int(header["seed"]),
        bank=bank,
        created=header.get("created", ""),
        clamp_x0=bool(header.get("clamp_x0", True)),
        clamp_bound=float(header.get("clamp_bound", 1.0)),
    )
