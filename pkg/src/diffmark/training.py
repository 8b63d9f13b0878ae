"""Joint optimization of denoiser and codec under the weighted total loss.

Per step, with a data batch x0, uniform timesteps t and noise eps:

    L_D = || eps - eps_theta(q_sample(x0, t, eps), t) ||^2          (mean)

The watermark pathway reuses the same network evaluation: from eps_hat it
forms the predicted clean image, re-noises it deterministically to
terminal time in a single step, injects the encoded watermark, decodes,
and scores against the watermark drawn for this step:

    x0_hat    = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t)
    x_tilde_T = sqrt(abar_T) x0_hat + sqrt(1-abar_T) eps_hat
    L_w       = || w - D(gamma E(w) + x_tilde_T) ||^2               (mean)

    L_total   = lambda_d * L_D + lambda_w * L_w

Reconstruction watermarks cycle round-robin over the whole bank so the
decoder stays discriminative; the checkpoint's configured watermark id is
what generation injects. With lambda_w = 0 the pathway is skipped
entirely, which makes a gamma=0, lambda_w=0 run exactly vanilla diffusion
training (the clean baseline).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .bank import WatermarkImage, default_bank, load_bank
from .checkpoint import Checkpoint
from .codec import build_codec
from .errors import DataError, ParameterError, TrainingError
from .schedule import make_schedule
from .unet import build_denoiser

DESK_BETA_START = 1e-4
DESK_BETA_END = 0.1  # keeps abar_T ~ 4e-5 at the desk default T = 200


@dataclass
class TrainConfig:
    dataset: str = ""
    resolution: int = 32
    model_kind: str = "ddim"
    watermark_id: int | None = 0
    num_steps: int = 200
    batch_size: int = 64
    epochs: int = 30
    learning_rate: float = 2e-4
    lambda_d: float = 1.0
    lambda_w: float = 1.0
    seed: int = 0
    gamma: float = 1.0
    sample_steps: int = 50
    beta_start: float = DESK_BETA_START
    beta_end: float = DESK_BETA_END
    bank_dir: str | None = None
    bank_size: int = 4
    extraction_mode: str = "ddim-invert"
    extraction_fixed_t: int = 100
    detach_pathway: bool = True
    base_channels: int = 32
    channel_mults: tuple = (1, 2, 4)
    num_res_blocks: int = 1
    codec_channels: int = 32
    codec_scale: float = 0.5
    codec_learning_rate: float = 1e-3
    clamp_x0: bool = True
    clamp_bound: float = 1.0

    def __post_init__(self):
        if self.lambda_d < 0 or self.lambda_w < 0:
            raise ParameterError("loss weights must be nonnegative")
        if self.model_kind not in ("ddim", "ddpm"):
            raise ParameterError(f"model_kind must be 'ddim' or 'ddpm', got {self.model_kind!r}")
        if self.extraction_mode not in ("ddim-invert", "qsample"):
            raise ParameterError(f"unknown extraction_mode {self.extraction_mode!r}")

    @classmethod
    def weighted_preset(cls, **overrides) -> "TrainConfig":
        """Preset giving the diffusion term the higher weight."""
        return cls(lambda_d=2.0, lambda_w=1.0, **overrides)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        raw = json.loads(Path(path).read_text())
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        if "channel_mults" in raw:
            raw = dict(raw, channel_mults=tuple(raw["channel_mults"]))
        return cls(**raw)

    def to_json_file(self, path):
        d = asdict(self)
        d["channel_mults"] = list(d["channel_mults"])
        Path(path).write_text(json.dumps(d, indent=2))

    def with_overrides(self, **overrides) -> "TrainConfig":
        return replace(self, **overrides)


@dataclass
class TrainLog:
    seed: int = 0
    records: list = field(default_factory=list)

    def append(self, epoch: int, loss_d: float, loss_w: float,
               loss_total: float, seconds: float):
        for name, v in (("L_D", loss_d), ("L_w", loss_w), ("L_total", loss_total)):
            if not np.isfinite(v):
                raise TrainingError(name, v)
        self.records.append({
            "epoch": epoch, "loss_d": loss_d, "loss_w": loss_w,
            "loss_total": loss_total, "seconds": seconds,
        })

    def write(self, path):
        path = Path(path)
        new = not path.exists()
        with path.open("a") as fh:
            if new:
                fh.write("epoch\tloss_d\tloss_w\tloss_total\tseconds\n")
            for r in self.records:
                fh.write(f"{r['epoch']}\t{r['loss_d']:.8f}\t{r['loss_w']:.8f}\t"
                         f"{r['loss_total']:.8f}\t{r['seconds']:.3f}\n")

    @staticmethod
    def read(path) -> "TrainLog":
        log = TrainLog()
        lines = Path(path).read_text().strip().splitlines()
        for line in lines[1:]:
            epoch, ld, lw, lt, sec = line.split("\t")
            log.records.append({"epoch": int(epoch), "loss_d": float(ld),
                                "loss_w": float(lw), "loss_total": float(lt),
                                "seconds": float(sec)})
        return log


@dataclass
class TrainState:
    denoiser: torch.nn.Module
    codec: torch.nn.Module
    schedule: object
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    step: int = 0


def init_state(cfg: TrainConfig) -> TrainState:
    denoiser = build_denoiser(
        {
            "in_channels": 3,
            "base_channels": cfg.base_channels,
            "channel_mults": tuple(cfg.channel_mults),
            "num_res_blocks": cfg.num_res_blocks,
        },
        seed=cfg.seed,
    )
    codec = build_codec(
        {
            "channels": 3,
            "feature_channels": cfg.codec_channels,
            "resolution": cfg.resolution,
            "encoder_scale": cfg.codec_scale,
        },
        seed=cfg.seed + 10_000,
    )
    # the codec is far smaller than the denoiser and tolerates a faster rate
    optimizer = torch.optim.Adam([
        {"params": list(denoiser.parameters()), "lr": cfg.learning_rate},
        {"params": list(codec.parameters()), "lr": cfg.codec_learning_rate},
    ])
    generator = torch.Generator().manual_seed(cfg.seed + 1)
    sched = make_schedule(cfg.num_steps, cfg.beta_start, cfg.beta_end)
    return TrainState(denoiser, codec, sched, optimizer, generator)


def train_step(batch: torch.Tensor, w: WatermarkImage | None,
               state: TrainState, cfg: TrainConfig):
    """One gradient update on lambda_d * L_D + lambda_w * L_w.

    Returns (state, loss_d, loss_w); loss_w is 0.0 when the watermark
    pathway is inactive (lambda_w == 0 or no watermark given).
    """
    sched = state.schedule
    B = batch.shape[0]
    t = torch.randint(1, sched.num_steps + 1, (B,), generator=state.generator)
    eps = torch.randn(batch.shape, generator=state.generator, dtype=batch.dtype)

    ab = torch.from_numpy(sched.gather_alpha_bar(t.numpy())).to(batch.dtype)
    ab = ab.reshape(-1, 1, 1, 1)
    x_t = torch.sqrt(ab) * batch + torch.sqrt(1.0 - ab) * eps
    eps_hat = state.denoiser(x_t, t)
    loss_d = torch.mean((eps - eps_hat) ** 2)

    use_pathway = cfg.lambda_w > 0 and w is not None
    if use_pathway:
        abar_T = sched.alpha_bar(sched.num_steps)
        x0_hat = (x_t - torch.sqrt(1.0 - ab) * eps_hat) / torch.sqrt(ab)
        x_tilde_T = np.sqrt(abar_T) * x0_hat + np.sqrt(1.0 - abar_T) * eps_hat
        if cfg.detach_pathway:
            x_tilde_T = x_tilde_T.detach()
        w_t = torch.from_numpy(w.pixels)
        w_feat = state.codec.encode(w_t)
        w_rec = state.codec.decode(cfg.gamma * w_feat[None] + x_tilde_T)
        loss_w = torch.mean((w_t[None] - w_rec) ** 2)
    else:
        loss_w = torch.zeros(())

    if not torch.isfinite(loss_d):
        raise TrainingError("L_D", float(loss_d.detach()))
    if not torch.isfinite(loss_w):
        raise TrainingError("L_w", float(loss_w.detach()))

    total = cfg.lambda_d * loss_d + cfg.lambda_w * loss_w
    state.optimizer.zero_grad()
    total.backward()
    state.optimizer.step()
    state.denoiser.mark_trained()
    state.step += 1
    return state, float(loss_d.detach()), float(loss_w.detach())


def _load_training_data(cfg: TrainConfig) -> np.ndarray:
    from .dataset import load_images

    path = Path(cfg.dataset)
    if not path.exists():
        raise FileNotFoundError(f"training dataset not found: {path}")
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
        if not files:
            raise DataError(f"no PNG files under {path}")
        return load_images(files)
    if path.suffix == ".npz":
        with np.load(path) as data:
            return np.asarray(data["images"], dtype=np.float32)
    raise DataError(f"unsupported dataset location: {path}")


def _resolve_bank(cfg: TrainConfig) -> list[WatermarkImage]:
    if cfg.bank_dir:
        return load_bank(cfg.bank_dir)
    return default_bank(cfg.resolution, cfg.bank_size)


def run_training(cfg: TrainConfig, data: np.ndarray | None = None):
    """Train for cfg.epochs and return (Checkpoint, TrainLog)."""
    if data is None:
        data = _load_training_data(cfg)
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 4 or data.shape[2] != cfg.resolution or data.shape[3] != cfg.resolution:
        raise DataError(
            f"training data {data.shape} does not match resolution {cfg.resolution}"
        )

    bank = _resolve_bank(cfg)
    if cfg.watermark_id is not None and cfg.watermark_id not in [w.watermark_id for w in bank]:
        raise ParameterError(f"watermark id {cfg.watermark_id} not in bank")

    state = init_state(cfg)
    log = TrainLog(seed=cfg.seed)
    order_rng = np.random.default_rng(cfg.seed + 2)
    watermarked = cfg.watermark_id is not None

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = order_rng.permutation(data.shape[0])
        sum_d = sum_w = 0.0
        nb = 0
        for start in range(0, data.shape[0], cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = torch.from_numpy(data[idx])
            w = bank[state.step % len(bank)] if watermarked else None
            state, ld, lw = train_step(batch, w, state, cfg)
            sum_d += ld
            sum_w += lw
            nb += 1
        mean_d, mean_w = sum_d / nb, sum_w / nb
        log.append(epoch, mean_d, mean_w,
                   cfg.lambda_d * mean_d + cfg.lambda_w * mean_w,
                   time.perf_counter() - t0)

    state.denoiser.eval()
    state.codec.eval()
    ckpt = Checkpoint(
        denoiser=state.denoiser,
        codec=state.codec,
        schedule=state.schedule,
        kind=cfg.model_kind,
        resolution=cfg.resolution,
        watermark_id=cfg.watermark_id,
        gamma=cfg.gamma,
        sample_steps=cfg.sample_steps,
        extraction_mode=cfg.extraction_mode,
        extraction_fixed_t=cfg.extraction_fixed_t,
        seed=cfg.seed,
        bank=bank,
        clamp_x0=cfg.clamp_x0,
        clamp_bound=cfg.clamp_bound,
    )
    return ckpt, log


def train_codec_alone(bank: list[WatermarkImage], steps: int = 2000,
                      learning_rate: float = 2e-3, noise_std: float = 0.0,
                      feature_channels: int = 32, encoder_scale: float = 0.5,
                      seed: int = 0):
    """Plain autoencoder training of the codec on the bank.

    noise_std > 0 additionally trains robust decoding from noisy features
    (the joint trainer's regime); 0 is the plain autoencoder.
    Returns (codec, list of per-watermark reconstruction MSEs).
    """
    if not bank:
        raise DataError("cannot train a codec on an empty bank")
    res = bank[0].resolution
    codec = build_codec(
        {"channels": 3, "feature_channels": feature_channels,
         "resolution": res, "encoder_scale": encoder_scale},
        seed=seed,
    )
    opt = torch.optim.Adam(codec.parameters(), lr=learning_rate)
    gen = torch.Generator().manual_seed(seed + 1)
    w_all = torch.from_numpy(np.stack([w.pixels for w in bank]))
    for _ in range(steps):
        feats = codec.encode(w_all)
        if noise_std > 0:
            feats = feats + noise_std * torch.randn(feats.shape, generator=gen)
        rec = codec.decode(feats)
        loss = torch.mean((w_all - rec) ** 2)
        if not torch.isfinite(loss):
            raise TrainingError("codec", float(loss))
        opt.zero_grad()
        loss.backward()
        opt.step()
    codec.eval()
    with torch.no_grad():
        rec = codec.decode(codec.encode(w_all))
        per_wm = torch.mean((w_all - rec) ** 2, dim=(1, 2, 3))
    return codec, [float(v) for v in per_wm]
