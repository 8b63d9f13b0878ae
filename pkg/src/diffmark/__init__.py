"""diffmark: blind watermarking for desk-scale diffusion models.

Train a diffusion model with a watermark folded into its generative
process, generate watermarked images, recover and identify the watermark,
train presence/type detectors, attack images, compare image statistics,
and build verified datasets of generations.
"""

from .attacks import AttackSpec, apply_attack, default_attacks, psnr, quality_guard
from .bank import WatermarkImage, default_bank, load_bank, save_bank
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .codec import WatermarkCodec, build_codec, decode, encode, inject, reconstruction_loss
from .dataset import (
    GwiManifest,
    build_dataset,
    load_image,
    load_images,
    load_images_from_manifest,
    save_image,
    verify_manifest,
)
from .detectors import (
    AccuracyReport,
    ClassifierHead,
    DetectorConfig,
    TrunkEmbedder,
    classify,
    evaluate,
    evaluate_under_attacks,
    format_attack_table,
    load_head,
    save_head,
    train_detector,
)
from .diffusion import (
    DiffusionVariance,
    ddim_invert,
    ddim_reverse_step,
    ddim_sample,
    ddpm_reverse_step,
    ddpm_sample,
    noise_prediction_loss,
    q_sample,
)
from .imstats import (
    STAT_KINDS,
    ArrayEmbedder,
    StatsReport,
    compute_statistic,
    diff_report,
    fid,
    inception_score,
)
from .pipeline import ExtractionResult, extract_watermark, generate_watermarked, match_watermark
from .schedule import NoiseSchedule, make_schedule, sampling_grid
from .toydata import make_toy_corpus
from .training import TrainConfig, TrainLog, run_training, train_codec_alone, train_step
from .unet import UNetDenoiser, build_denoiser

__version__ = "0.1.0"
