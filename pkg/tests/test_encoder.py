import pytest
import torch

from warpboard.encoder import EncoderConfig, LatentEncoder


def test_level_split_puts_coarse_first():
    assert EncoderConfig().level_split() == (4, 2, 2)
    assert sum(EncoderConfig(n_levels=5).level_split()) == 5


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(resolution=20)
    with pytest.raises(ValueError):
        EncoderConfig(resolution=16, pooled_size=4)
    with pytest.raises(ValueError):
        EncoderConfig(coarse_fraction=0.8, mid_fraction=0.5)


def test_encoder_output_shape_and_pyramid(tiny_cfg):
    enc = LatentEncoder(tiny_cfg.encoder)
    x = torch.rand(2, 3, 16, 16) * 2 - 1
    feats = enc.pyramid(x)
    assert feats.fine.shape[-1] == 8
    assert feats.mid.shape[-1] == 4
    assert feats.coarse.shape[-1] == 2
    w = enc(x)
    assert w.shape == (2, tiny_cfg.encoder.n_levels, tiny_cfg.encoder.latent_dim)
    assert torch.equal(enc.encode(x), w)


def test_latent_average_starts_at_zero_and_shifts_output(tiny_cfg):
    enc = LatentEncoder(tiny_cfg.encoder)
    assert float(enc.latent_avg.abs().sum()) == 0.0
    x = torch.zeros(1, 3, 16, 16)
    before = enc(x)
    with torch.no_grad():
        enc.latent_avg.fill_(1.0)
    assert torch.allclose(enc(x), before + 1.0)


def test_encoder_rejects_wrong_shape(tiny_cfg):
    enc = LatentEncoder(tiny_cfg.encoder)
    with pytest.raises(ValueError):
        enc(torch.zeros(1, 3, 32, 32))
    with pytest.raises(ValueError):
        enc(torch.zeros(3, 16, 16))


def test_gradients_reach_input(tiny_cfg):
    enc = LatentEncoder(tiny_cfg.encoder)
    x = torch.rand(1, 3, 16, 16, requires_grad=True)
    enc(x).pow(2).sum().backward()
    assert x.grad is not None and float(x.grad.abs().sum()) > 0


def test_encode_gradcheck(tiny_cfg):
    torch.manual_seed(0)
    enc = LatentEncoder(tiny_cfg.encoder).double()
    x = (torch.rand(1, 3, 16, 16, dtype=torch.float64) * 2 - 1).requires_grad_(True)
    assert torch.autograd.gradcheck(lambda x: enc.encode(x).pow(2).sum(), (x,))
