"""Training objectives for the encoder, the inpainting network and the discriminator."""
from __future__ import annotations

from dataclasses import dataclass, fields
import math
from typing import Callable, NamedTuple

import torch
from torch import Tensor, nn
import torch.nn.functional as F


@dataclass
class LossWeights:
    # encoder reconstruction
    l2: float = 1.0
    lpips: float = 0.8
    id_wplus: float = 0.1
    # inpainting reconstruction
    l1: float = 10.0
    percep: float = 30.0
    id: float = 0.1
    # inpainting total
    rec: float = 1.0
    consistency: float = 0.1
    adv: float = 10.0
    # discriminator gradient penalty
    gamma: float = 10.0
    squared_r1: bool = False

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, bool) and value < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0, got {value}")


def _seeded_init(module: nn.Module, seed: int) -> None:
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                m.weight.copy_(torch.randn(m.weight.shape, generator=g) * math.sqrt(2.0 / fan_in))
                if m.bias is not None:
                    m.bias.zero_()
    module.requires_grad_(False)
    module.eval()


class PerceptualExtractor(nn.Module):
    """Fixed random-weight conv stack; distance on channel-normalized features."""

    def __init__(self, channels: tuple[int, ...] = (16, 32, 32), seed: int = 1234, eps: float = 1e-10) -> None:
        super().__init__()
        self.eps = eps
        layers = []
        in_ch = 3
        for i, ch in enumerate(channels):
            layers.append(nn.Conv2d(in_ch, ch, 3, stride=1 if i == 0 else 2, padding=1))
            in_ch = ch
        self.layers = nn.ModuleList(layers)
        _seeded_init(self, seed)

    def features(self, image: Tensor) -> list[Tensor]:
        feats = []
        x = image
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2)
            feats.append(x)
        return feats

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        total = a.new_zeros(())
        for fa, fb in zip(self.features(a), self.features(b)):
            na = fa / (fa.square().sum(dim=1, keepdim=True) + self.eps).sqrt()
            nb = fb / (fb.square().sum(dim=1, keepdim=True) + self.eps).sqrt()
            total = total + (na - nb).square().sum(dim=1).mean()
        return total


class IdentityEmbedder(nn.Module):
    """Fixed random-weight map from images to unit-norm embeddings."""

    def __init__(self, embed_dim: int = 64, channels: tuple[int, ...] = (16, 32), seed: int = 4321) -> None:
        super().__init__()
        layers = []
        in_ch = 3
        for ch in channels:
            layers.append(nn.Conv2d(in_ch, ch, 3, stride=2, padding=1))
            in_ch = ch
        self.layers = nn.ModuleList(layers)
        self.head = nn.Linear(in_ch, embed_dim)
        _seeded_init(self, seed)

    def forward(self, image: Tensor) -> Tensor:
        x = image
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2)
        return F.normalize(self.head(x.mean(dim=(2, 3))), dim=-1)


class Extractors(NamedTuple):
    perceptual: Callable[[Tensor, Tensor], Tensor] | None
    identity: Callable[[Tensor], Tensor] | None


def default_extractors() -> Extractors:
    return Extractors(PerceptualExtractor(), IdentityEmbedder())


def _check_same(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def identity_distance(a: Tensor, b: Tensor, embedder: Callable[[Tensor], Tensor]) -> Tensor:
    return (1.0 - (embedder(a) * embedder(b)).sum(dim=-1)).mean()


def _weighted_terms(
    recon: Tensor,
    target: Tensor,
    pixel: Tensor,
    w_pixel: float,
    w_percep: float,
    w_id: float,
    extractors: Extractors | None,
) -> Tensor:
    total = w_pixel * pixel
    if w_percep:
        if extractors is None or extractors.perceptual is None:
            raise ValueError("perceptual weight is set but no perceptual extractor was given")
        total = total + w_percep * extractors.perceptual(recon, target)
    if w_id:
        if extractors is None or extractors.identity is None:
            raise ValueError("identity weight is set but no identity embedder was given")
        total = total + w_id * identity_distance(recon, target, extractors.identity)
    return total


def loss_wplus(recon: Tensor, target: Tensor, weights: LossWeights, extractors: Extractors | None = None) -> Tensor:
    """Encoder objective: MSE + perceptual + identity."""
    _check_same(recon, target)
    pixel = F.mse_loss(recon, target)
    return _weighted_terms(recon, target, pixel, weights.l2, weights.lpips, weights.id_wplus, extractors)


def loss_rec(recon: Tensor, target: Tensor, weights: LossWeights, extractors: Extractors | None = None) -> Tensor:
    """Inpainting reconstruction: MAE + perceptual + identity."""
    _check_same(recon, target)
    pixel = F.l1_loss(recon, target)
    return _weighted_terms(recon, target, pixel, weights.l1, weights.percep, weights.id, extractors)


def latent_distance(wa: Tensor, wb: Tensor) -> Tensor:
    """Squared distance between codes, normalized by ``L * d`` and averaged over the batch."""
    _check_same(wa, wb)
    return F.mse_loss(wa, wb)


def loss_consistency(a: Tensor, b: Tensor, encoder: Callable[[Tensor], Tensor]) -> Tensor:
    _check_same(a, b)
    return latent_distance(encoder(a), encoder(b))


def _check_probabilities(scores: Tensor, what: str) -> None:
    if bool(((scores <= 0) | (scores >= 1) | ~torch.isfinite(scores)).any()):
        raise ValueError(f"{what} must be probabilities in (0, 1)")


def loss_adv_g(d_scores_fake: Tensor) -> Tensor:
    _check_probabilities(d_scores_fake, "fake scores")
    return -torch.log(d_scores_fake).mean()


def loss_adv_d(
    d_scores_real: Tensor,
    d_scores_fake: Tensor,
    grad_norms_real: Tensor,
    gamma: float,
    *,
    squared: bool = False,
) -> Tensor:
    _check_probabilities(d_scores_real, "real scores")
    _check_probabilities(d_scores_fake, "fake scores")
    penalty = grad_norms_real.square() if squared else grad_norms_real
    return (
        -torch.log(d_scores_real).mean()
        - torch.log1p(-d_scores_fake).mean()
        + gamma * penalty.mean()
    )


def r1_grad_norms(discriminator: Callable[[Tensor], Tensor], real: Tensor) -> tuple[Tensor, Tensor]:
    """Discriminator scores on ``real`` and the per-sample norms of their input gradients."""
    real = real.detach().requires_grad_(True)
    scores = discriminator(real)
    (grad,) = torch.autograd.grad(scores.sum(), real, create_graph=True, allow_unused=True)
    if grad is None:
        return scores, real.new_zeros(real.shape[0])
    return scores, grad.flatten(1).norm(dim=1)


# --- inpainting total ---


@dataclass
class SVINetBatch:
    """Images entering the inpainting objective; either path may be absent."""

    novel: Tensor | None = None  # inpainted novel view (real path)
    rewarp: Tensor | None = None  # inpainted re-warp back at the input view
    real: Tensor | None = None  # input image
    synth: Tensor | None = None  # inpainted synthetic target view
    synth_target: Tensor | None = None  # rendered synthetic target view

    def _check(self) -> None:
        real_path = [self.novel, self.rewarp, self.real]
        if any(x is not None for x in real_path) and any(x is None for x in real_path):
            raise ValueError("real path needs novel, rewarp and real images together")
        if (self.synth is None) != (self.synth_target is None):
            raise ValueError("synthetic path needs both the inpainted and the target image")
        if self.real is None and self.synth is None:
            raise ValueError("empty batch")
        if self.real is not None:
            _check_same(self.novel, self.real)
            _check_same(self.rewarp, self.real)
        if self.synth is not None:
            _check_same(self.synth, self.synth_target)

    def reconstruction_pairs(self) -> tuple[Tensor, Tensor]:
        """``[rewarp, synth]`` against ``[real, synth_target]``; the novel view has no ground truth."""
        self._check()
        preds = [x for x in (self.rewarp, self.synth) if x is not None]
        targets = [x for x in (self.real, self.synth_target) if x is not None]
        return torch.cat(preds), torch.cat(targets)

    def consistency_pairs(self) -> tuple[Tensor, Tensor]:
        """``[novel, rewarp, synth]`` against ``[real, real, synth_target]``."""
        self._check()
        preds, targets = [], []
        if self.real is not None:
            preds += [self.novel, self.rewarp]
            targets += [self.real, self.real]
        if self.synth is not None:
            preds.append(self.synth)
            targets.append(self.synth_target)
        return torch.cat(preds), torch.cat(targets)

    def fakes(self) -> Tensor:
        self._check()
        return torch.cat([x for x in (self.novel, self.rewarp, self.synth) if x is not None])


def combine_svinet_losses(rec: Tensor | float, consistency: Tensor | float, adv: Tensor | float, weights: LossWeights):
    return weights.rec * rec + weights.consistency * consistency + weights.adv * adv


def loss_svinet_total(
    batch: SVINetBatch,
    weights: LossWeights,
    extractors: Extractors | None,
    encoder: Callable[[Tensor], Tensor],
    discriminator: Callable[[Tensor], Tensor],
    *,
    use_consistency_loss: bool = True,
) -> tuple[Tensor, dict[str, float]]:
    preds, targets = batch.reconstruction_pairs()
    rec = loss_rec(preds, targets, weights, extractors)
    if use_consistency_loss:
        a, b = batch.consistency_pairs()
        cons = loss_consistency(a, b, encoder)
    else:
        cons = rec.new_zeros(())
    adv = loss_adv_g(discriminator(batch.fakes()))
    total = combine_svinet_losses(rec, cons, adv, weights)
    parts = {"rec": float(rec), "consistency": float(cons), "adv_g": float(adv), "total": float(total)}
    return total, parts


__all__ = [
    "LossWeights",
    "PerceptualExtractor",
    "IdentityEmbedder",
    "Extractors",
    "default_extractors",
    "identity_distance",
    "loss_wplus",
    "loss_rec",
    "latent_distance",
    "loss_consistency",
    "loss_adv_g",
    "loss_adv_d",
    "r1_grad_norms",
    "SVINetBatch",
    "combine_svinet_losses",
    "loss_svinet_total",
]
