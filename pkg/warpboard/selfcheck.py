"""Invariant suite run by ``warpboard selfcheck``.

Every check builds tiny float64 inputs, compares against a closed-form or
brute-force oracle and raises ``AssertionError`` on mismatch.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging
import math
import time
from typing import Callable

import numpy as np
import pandas as pd
import torch
from torch import Tensor
from tqdm import tqdm

from .checkpoint import from_bytes, to_bytes
from .generator import RadianceSample, SamplingConfig, compositing_weights, march
from .geometry import (
    Intrinsics,
    RayBundle,
    RelativePose,
    mirror_pose,
    orbit_pose,
    project,
    relative_pose,
    unproject,
)
from .losses import (
    LossWeights,
    PerceptualExtractor,
    IdentityEmbedder,
    Extractors,
    SVINetBatch,
    latent_distance,
    loss_adv_d,
    loss_adv_g,
    loss_rec,
    loss_svinet_total,
    loss_wplus,
)
from .svinet import DEMOD_EPS, FFCResBlock, ModulatedFFC, SpectralTransform, SymmetryFusion, modulate_weights
from .warping import WarpConfig, fill_depth, forward_warp

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["check", "passed", "detail", "seconds"]


@dataclass
class CheckContext:
    demod_eps: float = DEMOD_EPS
    seed: int = 0

    def generator(self) -> torch.Generator:
        return torch.Generator().manual_seed(self.seed)


@dataclass
class Check:
    name: str
    run: Callable[[CheckContext], str]


CHECKS: list[Check] = []


def _check(name: str):
    def register(fn: Callable[[CheckContext], str]) -> Callable[[CheckContext], str]:
        CHECKS.append(Check(name, fn))
        return fn

    return register


def _max_err(a: Tensor, b: Tensor) -> float:
    return float((a - b).abs().max())


# --- geometry ---


@_check("project_unproject_roundtrip")
def _project_roundtrip(ctx: CheckContext) -> str:
    g = ctx.generator()
    K = Intrinsics(4.2647, 4.2647)
    pose = orbit_pose(0.3, -0.1, 2.7)
    pix = torch.rand(64, 2, generator=g, dtype=torch.float64)
    depth = 1.5 + 2.0 * torch.rand(64, generator=g, dtype=torch.float64)
    uv, z, front = project(unproject(pix, depth, K, pose), K, pose)
    err = max(_max_err(uv, pix), _max_err(z, depth))
    assert bool(front.all()) and err < 1e-6, f"round trip error {err:.2e}"
    return f"max err {err:.1e}"


@_check("relative_pose_matrix")
def _relative_pose(ctx: CheckContext) -> str:
    a, b, c = orbit_pose(0.4, 0.1, 2.7), orbit_pose(-0.2, -0.2, 2.7), orbit_pose(0.0, 0.25, 3.1)
    direct = relative_pose(a, b).matrix()
    oracle = torch.linalg.inv(b.matrix()) @ a.matrix()
    chained = (relative_pose(b, c) @ relative_pose(a, b)).matrix()
    err = max(_max_err(direct, oracle), _max_err(chained, relative_pose(a, c).matrix()))
    assert err < 1e-6, f"composition error {err:.2e}"
    twice = mirror_pose(mirror_pose(a)).matrix()
    assert torch.equal(twice, a.matrix()), "mirror_pose is not an involution"
    return f"max err {err:.1e}"


# --- volume rendering ---


@_check("compositing_oracle")
def _compositing(ctx: CheckContext) -> str:
    sigma = torch.tensor([0.7, 2.5, 0.1], dtype=torch.float64)
    delta = torch.tensor([0.3, 0.2, 0.9], dtype=torch.float64)
    weights = compositing_weights(sigma, delta)
    oracle, T = [], 1.0
    for s, d in zip(sigma.tolist(), delta.tolist()):
        oracle.append(T * (1.0 - math.exp(-s * d)))
        T *= math.exp(-s * d)
    err = _max_err(weights, torch.tensor(oracle, dtype=torch.float64))
    half = float(compositing_weights(torch.tensor([math.log(2.0)]), torch.tensor([1.0]))[0])
    assert err < 1e-6 and abs(half - 0.5) < 1e-6, f"weights off by {err:.2e}, single sample {half}"
    assert float(weights.sum()) <= 1.0
    return f"max err {err:.1e}"


@_check("opaque_slab_depth")
def _slab_depth(ctx: CheckContext) -> str:
    def slab(points: Tensor) -> RadianceSample:
        inside = (-points[..., 2] >= 2.0).to(points.dtype)
        return RadianceSample(1e4 * inside, torch.ones(*points.shape[:-1], 3, dtype=points.dtype))

    origin = torch.zeros(1, 1, 1, 3, dtype=torch.float64)
    direction = torch.tensor([0.0, 0.0, -1.0], dtype=torch.float64).view(1, 1, 1, 3)
    cfg = SamplingConfig(n_samples=4096)
    depth = float(march(slab, RayBundle(origin, direction), cfg).depth)
    assert abs(depth - 2.0) < 1e-3, f"slab depth {depth:.5f}, expected 2.0"
    return f"depth {depth:.5f}"


# --- warping ---


@_check("identity_warp_exact")
def _identity_warp(ctx: CheckContext) -> str:
    g = ctx.generator()
    image = torch.rand(2, 3, 16, 16, generator=g, dtype=torch.float64) * 2 - 1
    depth = 2.0 + torch.rand(2, 1, 16, 16, generator=g, dtype=torch.float64)
    out = forward_warp(image, depth, RelativePose.identity(), Intrinsics(4.2647, 4.2647))
    assert torch.equal(out.image, image), f"identity warp differs by {_max_err(out.image, image):.2e}"
    assert not bool(out.mask.any()), "identity warp produced holes"
    return "exact"


@_check("plane_shift_warp")
def _plane_shift(ctx: CheckContext) -> str:
    g = ctx.generator()
    W, Z, fx, shift = 16, 2.0, 4.0, 2
    K = Intrinsics(fx, fx)
    image = torch.rand(1, 3, W, W, generator=g, dtype=torch.float64)
    depth = torch.full((1, 1, W, W), Z, dtype=torch.float64)
    rel = RelativePose(torch.eye(3, dtype=torch.float64), torch.tensor([shift * Z / (fx * W), 0.0, 0.0]))
    out = forward_warp(image, depth, rel, K)
    err = float((out.image[..., shift:] - image[..., :-shift]).abs().mean())
    assert err < 1e-3 and bool(out.mask[..., :shift].all()), f"shift error {err:.2e}"
    return f"mean abs err {err:.1e}"


@_check("warp_roundtrip")
def _warp_roundtrip(ctx: CheckContext) -> str:
    R = 64
    K = Intrinsics(4.2647, 4.2647)
    src, dst = orbit_pose(0.0, 0.0, 2.7), orbit_pose(0.35, 0.1, 2.7)
    v, u = torch.meshgrid(
        torch.linspace(0, 1, R, dtype=torch.float64), torch.linspace(0, 1, R, dtype=torch.float64), indexing="ij"
    )
    image = torch.stack([0.5 * torch.sin(2 * math.pi * u), 0.5 * torch.cos(2 * math.pi * v), u - v]).unsqueeze(0)
    # gentle bump toward the camera on the plane through the look-at point
    depth = (2.7 - 0.1 * torch.exp(-((u - 0.5) ** 2 + (v - 0.5) ** 2) / 0.08))[None, None]
    there = forward_warp(image, depth, relative_pose(src, dst), K)
    novel_depth = fill_depth(there, torch.full_like(depth, 2.7))
    back = forward_warp(there.image, novel_depth, relative_pose(dst, src), K, valid=1.0 - there.mask)
    covisible = 1.0 - back.mask
    share = float(covisible.mean())
    assert share > 0.25, f"only {share:.0%} of pixels survive the round trip"
    err = float(((back.image - image).abs() * covisible).sum() / (3 * covisible.sum()))
    assert err <= 2e-2, f"round-trip error {err:.2e} on co-visible pixels"
    return f"mean abs err {err:.1e} on {share:.0%} of pixels"


# --- inpainting network mechanics ---


@_check("demodulation_closed_form")
def _demodulation(ctx: CheckContext) -> str:
    ones = modulate_weights(
        torch.ones(2, 1, 3, 3, dtype=torch.float64), torch.ones(1, dtype=torch.float64), ctx.demod_eps
    )
    err = _max_err(ones, torch.full_like(ones, 1.0 / 3.0))
    assert err < 1e-7, f"all-ones kernel off by {err:.2e}"
    g = ctx.generator()
    weight = torch.randn(4, 3, 3, 3, generator=g, dtype=torch.float64)
    styles = torch.rand(3, generator=g, dtype=torch.float64) + 0.5
    scaled = _max_err(
        modulate_weights(weight, 3.7 * styles, ctx.demod_eps), modulate_weights(weight, styles, ctx.demod_eps)
    )
    assert scaled < 1e-6, f"style scale changes weights by {scaled:.2e}"
    return f"err {err:.1e}, scale {scaled:.1e}"


@_check("film_identity")
def _film(ctx: CheckContext) -> str:
    torch.manual_seed(ctx.seed)
    fusion = SymmetryFusion(4).double()
    g = ctx.generator()
    f = torch.randn(1, 4, 8, 8, generator=g, dtype=torch.float64)
    out = fusion(f, torch.randn(1, 4, 8, 8, generator=g, dtype=torch.float64))
    assert torch.equal(out, f), "fresh fusion is not the identity"
    return "exact"


def spectral_oracle(x: Tensor, weight: Tensor) -> Tensor:
    """Explicit DFT-matrix evaluation of rfft2 -> 1x1 conv -> leaky relu -> irfft2 (ortho)."""
    _, C, H, W = x.shape
    half = W // 2 + 1
    m = torch.arange(H, dtype=torch.float64)
    n = torch.arange(W, dtype=torch.float64)
    l = torch.arange(half, dtype=torch.float64)
    FH = torch.exp(-2j * math.pi * torch.outer(m, m) / H) / math.sqrt(H)
    FW = torch.exp(-2j * math.pi * torch.outer(n, l) / W) / math.sqrt(W)  # [W, half]
    spec = torch.einsum("km,bcmn,nl->bckl", FH, x.to(torch.complex128), FW)
    stacked = torch.cat([spec.real, spec.imag], dim=1)
    mixed = torch.einsum("oi,bikl->bokl", weight, stacked)
    mixed = torch.nn.functional.leaky_relu(mixed, 0.2)
    spec = torch.complex(mixed[:, :C], mixed[:, C:])
    rows = torch.einsum("mk,bckl->bcml", FH.conj(), spec)
    # Hermitian reconstruction; imaginary parts of DC and Nyquist columns drop out
    coeff = torch.full((half,), 2.0, dtype=torch.float64)
    coeff[0] = 1.0
    coeff[-1] = 1.0
    phase = torch.exp(2j * math.pi * torch.outer(l, n) / W)  # [half, W]
    return torch.einsum("bcml,l,ln->bcmn", rows, coeff.to(torch.complex128), phase).real / math.sqrt(W)


@_check("spectral_dft_oracle")
def _spectral(ctx: CheckContext) -> str:
    torch.manual_seed(ctx.seed)
    latent_dim = 4
    worst = 0.0
    for size in (2, 4, 8):
        block = SpectralTransform(2, latent_dim, eps=ctx.demod_eps).double()
        g = ctx.generator()
        x = torch.randn(1, 2, size, size, generator=g, dtype=torch.float64)
        w_plus = torch.randn(1, 1, latent_dim, generator=g, dtype=torch.float64)
        styles = block.conv.styles(w_plus)
        weight = modulate_weights(block.conv.weight, styles, block.conv.eps)[0, :, :, 0, 0]
        err = _max_err(block(x, w_plus), spectral_oracle(x, weight))
        worst = max(worst, err)
    assert worst < 1e-5, f"spectral branch off by {worst:.2e}"
    return f"max err {worst:.1e}"


@_check("zero_block_identity")
def _zero_block(ctx: CheckContext) -> str:
    torch.manual_seed(ctx.seed)
    block = FFCResBlock(8, 4, 0.25, ctx.demod_eps).double()
    with torch.no_grad():
        for p in block.ffc2.parameters():
            p.zero_()
    g = ctx.generator()
    x = torch.randn(1, 8, 8, 8, generator=g, dtype=torch.float64)
    out = block(x, torch.randn(1, 1, 4, generator=g, dtype=torch.float64))
    assert torch.equal(out, x), "zero-weight block is not the identity"
    return "exact"


# --- differentiability ---


@_check("gradcheck_renderer")
def _grad_renderer(ctx: CheckContext) -> str:
    g = ctx.generator()
    origins = torch.zeros(1, 2, 2, 3, dtype=torch.float64)
    origins[..., 2] = 2.0
    directions = torch.nn.functional.normalize(
        torch.randn(1, 2, 2, 3, generator=g, dtype=torch.float64) * 0.1
        + torch.tensor([0.0, 0.0, -1.0], dtype=torch.float64),
        dim=-1,
    )
    rays = RayBundle(origins, directions)
    cfg = SamplingConfig(n_samples=6, near=1.0, far=3.0)

    def render(theta: Tensor) -> tuple[Tensor, Tensor]:
        def field(points: Tensor) -> RadianceSample:
            sigma = torch.nn.functional.softplus(points @ theta[:3] + theta[3])
            rgb = torch.sigmoid(points @ theta[4:13].view(3, 3))
            return RadianceSample(sigma, rgb)

        out = march(field, rays, cfg)
        return out.color, out.depth

    theta = torch.randn(13, generator=g, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(render, (theta,), eps=1e-6, atol=1e-6, rtol=1e-3)
    return "ok"


@_check("gradcheck_forward_warp")
def _grad_warp(ctx: CheckContext) -> str:
    g = ctx.generator()
    K = Intrinsics(4.2647, 4.2647)
    rel = relative_pose(orbit_pose(0.0, 0.0, 2.7), orbit_pose(0.05, 0.02, 2.7))
    image = torch.rand(1, 2, 6, 6, generator=g, dtype=torch.float64, requires_grad=True)
    depth = (2.4 + 0.3 * torch.rand(1, 1, 6, 6, generator=g, dtype=torch.float64)).requires_grad_(True)
    cfg = WarpConfig()

    def warp(img: Tensor, z: Tensor) -> Tensor:
        return forward_warp(img, z, rel, K, cfg).image

    assert torch.autograd.gradcheck(warp, (image, depth), eps=1e-6, atol=1e-5, rtol=1e-3)
    return "ok"


@_check("gradcheck_ffc_block")
def _grad_ffc(ctx: CheckContext) -> str:
    torch.manual_seed(ctx.seed)
    block = ModulatedFFC(4, 4, 0.5, ctx.demod_eps).double()
    g = ctx.generator()
    x = torch.randn(1, 4, 4, 4, generator=g, dtype=torch.float64, requires_grad=True)
    w_plus = torch.randn(1, 1, 4, generator=g, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b: block(a, b), (x, w_plus), eps=1e-6, atol=1e-5, rtol=1e-3)
    return "ok"


@_check("gradcheck_losses")
def _grad_losses(ctx: CheckContext) -> str:
    g = ctx.generator()
    weights = LossWeights()
    extractors = Extractors(PerceptualExtractor(channels=(4, 4)).double(), IdentityEmbedder(8, (4,)).double())
    target = torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64) * 2 - 1
    recon = (torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64) * 2 - 1).requires_grad_(True)
    assert torch.autograd.gradcheck(lambda r: loss_rec(r, target, weights, extractors), (recon,), eps=1e-6, atol=1e-5)
    assert torch.autograd.gradcheck(lambda r: loss_wplus(r, target, weights, extractors), (recon,), eps=1e-6, atol=1e-5)

    proj = torch.randn(3 * 8 * 8, 3 * 4, generator=g, dtype=torch.float64) * 0.05
    d_head = torch.randn(3 * 8 * 8, generator=g, dtype=torch.float64) * 0.05

    def encoder(x: Tensor) -> Tensor:
        return (x.flatten(1) @ proj).view(-1, 3, 4)

    def discriminator(x: Tensor) -> Tensor:
        return torch.sigmoid(x.flatten(1) @ d_head)

    def total(novel: Tensor, rewarp: Tensor, synth: Tensor) -> Tensor:
        batch = SVINetBatch(novel=novel, rewarp=rewarp, real=target, synth=synth, synth_target=target.flip(-1))
        return loss_svinet_total(batch, weights, extractors, encoder, discriminator)[0]

    fakes = tuple(
        (torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64) * 2 - 1).requires_grad_(True) for _ in range(3)
    )
    assert torch.autograd.gradcheck(total, fakes, eps=1e-6, atol=1e-5)

    wa = torch.randn(2, 3, 4, generator=g, dtype=torch.float64, requires_grad=True)
    wb = torch.randn(2, 3, 4, generator=g, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda a: latent_distance(a, wb), (wa,), eps=1e-6, atol=1e-8, rtol=1e-4)

    scores = (0.2 + 0.6 * torch.rand(3, generator=g, dtype=torch.float64)).requires_grad_(True)
    norms = torch.rand(3, generator=g, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(loss_adv_g, (scores,), eps=1e-6, atol=1e-8, rtol=1e-4)
    assert torch.autograd.gradcheck(
        lambda s, n: loss_adv_d(s, s.flip(0), n, weights.gamma), (scores, norms), eps=1e-6, atol=1e-8, rtol=1e-4
    )
    return "ok"


# --- arithmetic and plumbing ---


@_check("loss_weight_defaults")
def _loss_defaults(ctx: CheckContext) -> str:
    w = LossWeights()
    wired = (w.l2, w.lpips, w.id_wplus, w.l1, w.percep, w.id, w.rec, w.consistency, w.adv)
    assert wired == (1.0, 0.8, 0.1, 10.0, 30.0, 0.1, 1.0, 0.1, 10.0), f"defaults are {wired}"
    adv = float(loss_adv_g(torch.full((4,), 0.5, dtype=torch.float64)))
    assert abs(adv - 0.6931) < 1e-4, f"adversarial loss at D=0.5 is {adv}"
    return f"adv {adv:.4f}"


@_check("checkpoint_byte_stable")
def _checkpoint(ctx: CheckContext) -> str:
    rng = np.random.default_rng(ctx.seed)
    state = {
        "weights": torch.from_numpy(rng.standard_normal((3, 4)).astype(np.float32)),
        "step": {0: {"exp_avg": torch.arange(5, dtype=torch.float64)}},
        "names": ["a", "b"],
    }
    first = to_bytes(state, {"iteration": 7})
    loaded = from_bytes(first)
    second = to_bytes(loaded.state, loaded.metadata)
    assert first == second, "save -> load -> save changed the bytes"
    return f"{len(first)} bytes"


def run_selfcheck(
    demod_eps: float = DEMOD_EPS,
    seed: int = 0,
    names: list[str] | None = None,
) -> pd.DataFrame:
    """Run the registered checks and return one row per check."""
    if names is not None:
        unknown = sorted(set(names) - {c.name for c in CHECKS})
        if unknown:
            raise ValueError(f"unknown check(s) {unknown}; known: {[c.name for c in CHECKS]}")
    ctx = CheckContext(demod_eps=demod_eps, seed=seed)
    selected = [c for c in CHECKS if names is None or c.name in names]
    rows = []
    for check in tqdm(selected, desc="selfcheck", leave=False):
        start = time.perf_counter()
        try:
            detail, passed = check.run(ctx), True
        except Exception as exc:  # every failure becomes a table row
            detail, passed = f"{type(exc).__name__}: {exc}", False
            logger.error("check %s failed: %s", check.name, detail)
        rows.append(
            {"check": check.name, "passed": passed, "detail": detail, "seconds": time.perf_counter() - start}
        )
    report = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    logger.info("selfcheck: %d/%d passed", int(report["passed"].sum()), len(report))
    return report


__all__ = ["RESULT_COLUMNS", "CheckContext", "Check", "CHECKS", "spectral_oracle", "run_selfcheck"]
