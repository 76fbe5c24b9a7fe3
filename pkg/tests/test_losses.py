import math

import pytest
import torch

from warpboard.losses import (
    Extractors,
    IdentityEmbedder,
    LossWeights,
    PerceptualExtractor,
    SVINetBatch,
    default_extractors,
    identity_distance,
    latent_distance,
    loss_adv_d,
    loss_adv_g,
    loss_consistency,
    loss_rec,
    loss_svinet_total,
    loss_wplus,
    r1_grad_norms,
)


def _img(seed, n=2):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 3, 16, 16, generator=g) * 2 - 1


def _flatten_encoder(x):
    return x.flatten(1)


def _constant_discriminator(value=0.5):
    def d(x):
        return torch.full((x.shape[0],), value, dtype=x.dtype) + 0.0 * x.flatten(1).sum(1)

    return d


def test_default_weights():
    w = LossWeights()
    assert (w.l2, w.lpips, w.id_wplus) == (1.0, 0.8, 0.1)
    assert (w.l1, w.percep, w.id) == (10.0, 30.0, 0.1)
    assert (w.rec, w.consistency, w.adv) == (1.0, 0.1, 10.0)
    assert w.gamma == 10.0 and w.squared_r1 is False
    with pytest.raises(ValueError):
        LossWeights(adv=-1.0)


def test_adversarial_generator_loss_at_half():
    assert float(loss_adv_g(torch.tensor([0.5, 0.5]))) == pytest.approx(0.6931, abs=1e-4)
    with pytest.raises(ValueError):
        loss_adv_g(torch.tensor([0.0, 0.5]))
    with pytest.raises(ValueError):
        loss_adv_g(torch.tensor([float("nan")]))


def test_discriminator_loss_and_penalty():
    half = torch.tensor([0.5, 0.5])
    assert float(loss_adv_d(half, half, torch.zeros(2), 10.0)) == pytest.approx(2 * math.log(2.0), abs=1e-6)
    norms = torch.full((2,), 2.0)
    plain = float(loss_adv_d(half, half, norms, 10.0))
    squared = float(loss_adv_d(half, half, norms, 10.0, squared=True))
    assert plain == pytest.approx(2 * math.log(2.0) + 20.0, abs=1e-5)
    assert squared == pytest.approx(2 * math.log(2.0) + 40.0, abs=1e-5)


def test_r1_grad_norms_of_linear_discriminator():
    real = torch.randn(3, 3, 4, 4)
    scores, norms = r1_grad_norms(lambda x: (2.0 * x).flatten(1).sum(1), real)
    assert scores.shape == (3,)
    assert torch.allclose(norms, torch.full((3,), 2.0 * math.sqrt(48)))


def test_pixel_only_losses_need_no_extractors():
    a, b = _img(0), _img(1)
    weights = LossWeights(lpips=0.0, id_wplus=0.0, percep=0.0, id=0.0)
    assert torch.allclose(loss_wplus(a, b, weights), torch.mean((a - b) ** 2))
    assert torch.allclose(loss_rec(a, b, weights), 10.0 * torch.mean((a - b).abs()))
    assert float(loss_rec(a, a, weights)) == 0.0
    with pytest.raises(ValueError):
        loss_wplus(a, b, LossWeights())
    with pytest.raises(ValueError):
        loss_rec(a, b[:1], weights)


def test_extractors_are_fixed_and_zero_on_identical_images():
    ex = default_extractors()
    a, b = _img(0), _img(1)
    assert not any(p.requires_grad for p in ex.perceptual.parameters())
    assert float(ex.perceptual(a, a)) == pytest.approx(0.0, abs=1e-6)
    assert float(ex.perceptual(a, b)) > 0
    assert float(identity_distance(a, a, ex.identity)) == pytest.approx(0.0, abs=1e-6)
    emb = ex.identity(a)
    assert torch.allclose(emb.norm(dim=-1), torch.ones(2), atol=1e-5)
    again = PerceptualExtractor()
    assert torch.equal(again.layers[0].weight, ex.perceptual.layers[0].weight)
    assert IdentityEmbedder(embed_dim=8)(a).shape == (2, 8)


def test_full_wplus_loss_has_gradients():
    ex = default_extractors()
    a = _img(0).requires_grad_(True)
    loss = loss_wplus(a, _img(1), LossWeights(), ex)
    loss.backward()
    assert a.grad is not None and float(a.grad.abs().sum()) > 0


def test_latent_distance_is_mse():
    wa = torch.zeros(2, 4, 8)
    wb = torch.full((2, 4, 8), 2.0)
    assert float(latent_distance(wa, wb)) == pytest.approx(4.0)
    assert float(latent_distance(wa, wa)) == 0.0
    assert float(loss_consistency(_img(0), _img(0), _flatten_encoder)) == 0.0


def test_batch_grouping():
    real, novel, rewarp = _img(0, 1), _img(1, 1), _img(2, 1)
    synth, target = _img(3, 1), _img(4, 1)
    batch = SVINetBatch(novel=novel, rewarp=rewarp, real=real, synth=synth, synth_target=target)
    preds, targets = batch.reconstruction_pairs()
    assert torch.equal(preds, torch.cat([rewarp, synth]))
    assert torch.equal(targets, torch.cat([real, target]))
    a, b = batch.consistency_pairs()
    assert torch.equal(a, torch.cat([novel, rewarp, synth]))
    assert torch.equal(b, torch.cat([real, real, target]))
    assert batch.fakes().shape[0] == 3

    with pytest.raises(ValueError):
        SVINetBatch(novel=novel, real=real).fakes()
    with pytest.raises(ValueError):
        SVINetBatch(synth=synth).fakes()
    with pytest.raises(ValueError):
        SVINetBatch().fakes()


def test_svinet_total_combines_weighted_parts():
    batch = SVINetBatch(novel=_img(1, 1), rewarp=_img(2, 1), real=_img(0, 1))
    weights = LossWeights()
    total, parts = loss_svinet_total(batch, weights, default_extractors(), _flatten_encoder, _constant_discriminator())
    assert parts["adv_g"] == pytest.approx(math.log(2.0), abs=1e-6)
    expected = parts["rec"] + 0.1 * parts["consistency"] + 10.0 * parts["adv_g"]
    assert parts["total"] == pytest.approx(expected, rel=1e-5)
    assert float(total) == pytest.approx(parts["total"])

    _, no_cons = loss_svinet_total(
        batch, weights, default_extractors(), _flatten_encoder, _constant_discriminator(), use_consistency_loss=False
    )
    assert no_cons["consistency"] == 0.0


def test_losses_gradcheck():
    g = torch.Generator().manual_seed(0)
    a = torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64, requires_grad=True)
    b = torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64)
    weights = LossWeights(percep=0.0, id=0.0)
    assert torch.autograd.gradcheck(lambda x: loss_rec(x, b, weights), (a,))
    assert torch.autograd.gradcheck(lambda x: latent_distance(x, b), (a,))
    scores = torch.tensor([0.3, 0.6], dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(loss_adv_g, (scores,))
    norms = torch.tensor([0.5, 1.5], dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda s, n: loss_adv_d(s, s.flip(0), n, 10.0), (scores, norms))


def test_perfect_inpainter_has_zero_reconstruction_and_consistency():
    real, target = _img(0, 1), _img(5, 1)
    batch = SVINetBatch(novel=real.clone(), rewarp=real.clone(), real=real, synth=target.clone(), synth_target=target)
    total, parts = loss_svinet_total(batch, LossWeights(), default_extractors(), _flatten_encoder,
                                     _constant_discriminator())
    assert parts["rec"] == pytest.approx(0.0, abs=1e-6)
    assert parts["consistency"] == pytest.approx(0.0, abs=1e-6)
    assert float(total) == pytest.approx(10.0 * math.log(2.0), abs=1e-5)
