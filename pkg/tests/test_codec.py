import numpy as np
import pytest
import torch

from diffmark.bank import bank_array, default_bank, load_bank, save_bank
from diffmark.codec import build_codec, inject, reconstruction_loss
from diffmark.errors import ParameterError, ShapeError


@pytest.fixture(scope="module")
def codec():
    return build_codec({"resolution": 16, "feature_channels": 8}, seed=0)


def test_encode_preserves_shape_and_channels(codec):
    w = torch.randn(3, 16, 16).clamp(-1, 1)
    out = codec.encode(w)
    assert out.shape == (3, 16, 16)


def test_encoder_every_layer_preserves_spatial_size(codec):
    h = torch.randn(1, 3, 16, 16)
    for layer in codec.encoder:
        h = layer(h)
        assert h.shape[-2:] == (16, 16)


def test_encode_deterministic(codec):
    w = torch.randn(3, 16, 16).clamp(-1, 1)
    assert torch.equal(codec.encode(w), codec.encode(w))


def test_zeroed_final_encoder_layer_gives_zero_features():
    codec = build_codec({"resolution": 16, "feature_channels": 8}, seed=1)
    last = [m for m in codec.encoder if isinstance(m, torch.nn.Conv2d)][-1]
    with torch.no_grad():
        last.weight.zero_()
        last.bias.zero_()
    w = torch.randn(3, 16, 16)
    assert torch.equal(codec.encode(w), torch.zeros(3, 16, 16))


def test_encode_resolution_mismatch(codec):
    with pytest.raises(ShapeError):
        codec.encode(torch.randn(3, 8, 8))


def test_decode_bounded_and_shape(codec):
    noise = 100.0 * torch.randn(2, 3, 16, 16)
    with torch.no_grad():
        out = codec.decode(noise)
        again = codec.decode(noise)
    assert out.shape == (2, 3, 16, 16)
    assert float(out.abs().max()) <= 1.0
    assert torch.equal(out, again)
    with pytest.raises(ShapeError):
        codec.decode(torch.randn(2, 3, 8, 8))


def test_inject_examples():
    x = torch.full((2, 3, 4, 4), 1.0)
    w = torch.full((3, 4, 4), 0.5)
    assert torch.equal(inject(torch.zeros(3, 4, 4), x), x)
    assert torch.equal(inject(w, x, 0.0), x)
    assert torch.allclose(inject(w, x, 1.0), torch.full_like(x, 1.5))
    with pytest.raises(ShapeError):
        inject(torch.zeros(3, 2, 2), x)


def test_inject_linearity():
    gen = torch.Generator().manual_seed(0)
    w = torch.randn(3, 4, 4, generator=gen)
    x = torch.randn(2, 3, 4, 4, generator=gen)
    d = torch.randn(2, 3, 4, 4, generator=gen)
    a = 1.7
    assert torch.allclose(inject(a * w, x, 0.9), inject(w, x, a * 0.9), atol=1e-6)
    assert torch.allclose(inject(w, x + d, 0.9), inject(w, x, 0.9) + d, atol=1e-6)


def test_reconstruction_loss_examples():
    w = torch.ones(3, 4, 4)
    assert float(reconstruction_loss(w, w)) == 0.0
    assert float(reconstruction_loss(w, torch.zeros_like(w))) == pytest.approx(1.0)
    with pytest.raises(ShapeError):
        reconstruction_loss(w, torch.zeros(3, 2, 2))


def test_reconstruction_loss_symmetric():
    gen = torch.Generator().manual_seed(1)
    a = torch.randn(3, 4, 4, generator=gen)
    b = torch.randn(3, 4, 4, generator=gen)
    assert float(reconstruction_loss(a, b)) == pytest.approx(float(reconstruction_loss(b, a)))


def test_reconstruction_loss_gradient_matches_finite_differences():
    torch.manual_seed(0)
    codec = build_codec({"resolution": 8, "feature_channels": 4, "depth": 2}, seed=3)
    codec = codec.double()
    w = torch.randn(3, 8, 8, dtype=torch.float64).clamp(-1, 1)
    noise = torch.randn(3, 8, 8, dtype=torch.float64)

    def loss_fn():
        return reconstruction_loss(w, codec.decode(codec.encode(w) + noise))

    loss = loss_fn()
    loss.backward()
    params = list(codec.decoder.parameters())
    rng = np.random.default_rng(0)
    checked = bad = 0
    for p in params:
        flat = p.detach().reshape(-1)
        gflat = p.grad.reshape(-1)
        for idx in rng.choice(flat.numel(), size=min(10, flat.numel()), replace=False):
            h = 1e-5
            orig = float(flat[idx])
            with torch.no_grad():
                flat[idx] = orig + h
                up = float(loss_fn())
                flat[idx] = orig - h
                down = float(loss_fn())
                flat[idx] = orig
            fd = (up - down) / (2 * h)
            an = float(gflat[idx])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            checked += 1
            bad += rel >= 1e-3
    assert checked > 0 and bad / checked <= 0.05


# --- bank -------------------------------------------------------------------

def test_default_bank_shapes_and_energy():
    bank = default_bank(32)
    assert len(bank) == 4
    energies = [float(np.mean(w.pixels ** 2)) for w in bank]
    assert max(energies) / min(energies) < 1.25
    for w in bank:
        assert w.pixels.shape == (3, 32, 32)
        assert np.abs(w.pixels).max() <= 0.96


def test_bank_roundtrip_bit_exact(tmp_path):
    bank = default_bank(16)
    save_bank(bank, tmp_path)
    loaded = load_bank(tmp_path)
    assert len(loaded) == len(bank)
    for a, b in zip(bank, loaded):
        assert a.watermark_id == b.watermark_id
        assert np.array_equal(a.pixels, b.pixels)


def test_bank_array_requires_entries():
    with pytest.raises(ParameterError):
        bank_array([])
