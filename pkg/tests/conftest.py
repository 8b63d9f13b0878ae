import numpy as np
import pytest
import torch

import diffmark as dm
from diffmark.training import TrainConfig, run_training

TINY = dict(
    resolution=16,
    num_steps=10,
    batch_size=8,
    epochs=1,
    sample_steps=5,
    base_channels=8,
    channel_mults=(1, 2),
    codec_channels=8,
)


@pytest.fixture(scope="session")
def tiny_corpus():
    images, labels = dm.make_toy_corpus(32, resolution=16, seed=3)
    return images, labels


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_corpus):
    """A minimally trained watermarked checkpoint for plumbing tests."""
    cfg = TrainConfig(watermark_id=0, seed=11, **TINY)
    ckpt, _ = run_training(cfg, data=tiny_corpus[0])
    return ckpt


@pytest.fixture(scope="session")
def tiny_clean_checkpoint(tiny_corpus):
    cfg = TrainConfig(watermark_id=None, gamma=0.0, lambda_w=0.0, seed=11, **TINY)
    ckpt, _ = run_training(cfg, data=tiny_corpus[0])
    return ckpt


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def torch_gen():
    return torch.Generator().manual_seed(0)
