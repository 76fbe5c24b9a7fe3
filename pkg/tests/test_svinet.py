import numpy as np
import pytest
import torch

from warpboard.svinet import (
    FFCResBlock,
    ModulatedConv2d,
    ModulatedFFC,
    SVINet,
    SVINetConfig,
    SpectralTransform,
    SymmetryFusion,
    modulate_weights,
)


def test_demodulation_closed_form():
    weight = torch.ones(2, 1, 3, 3, dtype=torch.float64)
    out = modulate_weights(weight, torch.ones(1, dtype=torch.float64), eps=1e-8)
    assert torch.allclose(out, torch.full_like(out, 1 / 3), atol=1e-7)


def test_demodulation_matches_loop_oracle():
    g = torch.Generator().manual_seed(0)
    weight = torch.randn(3, 2, 3, 3, generator=g, dtype=torch.float64)
    styles = torch.rand(2, generator=g, dtype=torch.float64) + 0.5
    out = modulate_weights(weight, styles, eps=1e-8)
    for o in range(3):
        scaled = torch.stack([weight[o, i] * styles[i] for i in range(2)])
        expected = scaled / torch.sqrt((scaled ** 2).sum() + 1e-8)
        assert torch.allclose(out[o], expected, atol=1e-12)


def test_demodulation_is_scale_invariant_and_batches():
    g = torch.Generator().manual_seed(1)
    weight = torch.randn(4, 3, 3, 3, generator=g, dtype=torch.float64)
    styles = torch.rand(2, 3, generator=g, dtype=torch.float64) + 0.1
    batched = modulate_weights(weight, styles)
    assert batched.shape == (2, 4, 3, 3, 3)
    for b in range(2):
        assert torch.allclose(batched[b], modulate_weights(weight, styles[b]), atol=1e-12)
    assert torch.allclose(modulate_weights(weight, 7.0 * styles[0]), batched[0], atol=1e-6)


def test_demodulation_rejects_bad_arguments():
    weight = torch.ones(2, 3, 1, 1)
    with pytest.raises(ValueError):
        modulate_weights(weight, torch.ones(3), eps=0.0)
    with pytest.raises(ValueError):
        modulate_weights(weight, torch.ones(4))


def test_modulated_conv_without_modulation_ignores_latent():
    conv = ModulatedConv2d(3, 5, 3, latent_dim=8)
    x = torch.randn(2, 3, 8, 8)
    a = conv(x, torch.randn(2, 4, 8), use_modulation=False)
    b = conv(x, torch.randn(2, 4, 8), use_modulation=False)
    assert a.shape == (2, 5, 8, 8)
    assert torch.equal(a, b)


def test_fresh_fusion_is_identity():
    fusion = SymmetryFusion(6)
    f = torch.randn(2, 6, 4, 4)
    assert torch.equal(fusion(f, torch.randn(2, 6, 4, 4)), f)
    with pytest.raises(ValueError):
        fusion(f, torch.randn(2, 6, 2, 2))


@pytest.mark.parametrize("size", [2, 4, 8])
def test_spectral_transform_matches_numpy_fft(size):
    g = torch.Generator().manual_seed(size)
    channels = 2
    st = SpectralTransform(channels, latent_dim=4).double()
    x = torch.randn(1, channels, size, size, generator=g, dtype=torch.float64)
    w = torch.zeros(1, 1, 4, dtype=torch.float64)
    out = st(x, w, use_modulation=False, activation=False)

    kernel = modulate_weights(st.conv.weight.detach(), torch.ones(2 * channels, dtype=torch.float64), st.conv.eps)[:, :, 0, 0]
    spec = np.fft.rfft2(x[0].numpy(), norm="ortho")
    stacked = np.concatenate([spec.real, spec.imag], axis=0)
    mixed = np.einsum("oi,ihw->ohw", kernel.numpy(), stacked)
    expected = np.fft.irfft2(mixed[:channels] + 1j * mixed[channels:], s=(size, size), norm="ortho")
    assert np.allclose(out[0].detach().numpy(), expected, atol=1e-10)


def test_spectral_bypass_is_identity():
    st = SpectralTransform(2, latent_dim=4)
    x = torch.randn(1, 2, 6, 8)
    assert torch.allclose(st(x, torch.zeros(1, 1, 4), bypass_conv=True), x, atol=1e-5)
    with pytest.raises(ValueError):
        st(torch.randn(1, 2, 5, 4), torch.zeros(1, 1, 4))


def test_zero_block_is_identity():
    block = FFCResBlock(8, latent_dim=4, global_ratio=0.25)
    for ffc in (block.ffc1, block.ffc2):
        assert ffc.n_global == 2 and ffc.n_local == 6
    with torch.no_grad():
        for conv in block.ffc2.modules():
            if isinstance(conv, ModulatedConv2d):
                conv.weight.zero_()
                if conv.bias is not None:
                    conv.bias.zero_()
    x = torch.randn(2, 8, 4, 4)
    assert torch.allclose(block(x, torch.randn(2, 1, 4)), x, atol=1e-6)


def test_ffc_gradcheck():
    torch.manual_seed(0)
    ffc = ModulatedFFC(4, latent_dim=3, global_ratio=0.5).double()
    x = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 1, 3, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b: ffc(a, b), (x, w))


def test_config_validation():
    with pytest.raises(ValueError):
        SVINetConfig(demod_eps=-1.0)
    with pytest.raises(ValueError):
        SVINetConfig(n_down=2, n_up=3)
    with pytest.raises(ValueError):
        SVINetConfig(resolution=24)
    with pytest.raises(ValueError):
        SVINetConfig(global_ratio=1.0)


def test_latent_levels_grow_with_depth(tiny_cfg):
    net = SVINet(tiny_cfg.svinet)
    convs = [m for m in [*net.blocks.modules(), *net.decoder.modules(), net.to_rgb] if isinstance(m, ModulatedConv2d)]
    levels = [c.level for c in convs]
    assert len(levels) == net.n_modulated == 11
    assert levels == sorted(levels)
    assert levels[0] == 0 and levels[-1] == tiny_cfg.svinet.n_levels - 1


def _inputs(seed=0):
    g = torch.Generator().manual_seed(seed)
    initial = torch.rand(2, 3, 16, 16, generator=g) * 2 - 1
    mirror = torch.rand(2, 3, 16, 16, generator=g) * 2 - 1
    w = torch.randn(2, 4, 8, generator=g)
    return initial, mirror, w


def test_inpaint_shape_and_range(tiny_cfg):
    net = SVINet(tiny_cfg.svinet)
    initial, mirror, w = _inputs()
    out = net.inpaint(initial, mirror, w)
    assert out.shape == (2, 3, 16, 16)
    assert float(out.abs().max()) <= 1.0
    assert torch.equal(net(initial, mirror, w), out)


def test_ablation_switches(tiny_cfg):
    net = SVINet(tiny_cfg.svinet)
    initial, mirror, w = _inputs()
    _, other_mirror, other_w = _inputs(1)
    with torch.no_grad():
        assert torch.equal(
            net.inpaint(initial, mirror, w, use_modulation=False),
            net.inpaint(initial, mirror, other_w, use_modulation=False),
        )
        assert torch.equal(
            net.inpaint(initial, mirror, w, use_symmetry=False),
            net.inpaint(initial, other_mirror, w, use_symmetry=False),
        )
        assert not torch.equal(net.inpaint(initial, mirror, w), net.inpaint(initial, mirror, other_w))


def test_inpaint_rejects_wrong_resolution(tiny_cfg):
    net = SVINet(tiny_cfg.svinet)
    with pytest.raises(ValueError):
        net.inpaint(torch.zeros(1, 3, 32, 32), torch.zeros(1, 3, 32, 32), torch.zeros(1, 4, 8))
