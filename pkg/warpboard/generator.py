"""Toy tri-plane 3D generator and the volume renderer for color and depth."""
from __future__ import annotations

from dataclasses import dataclass
import functools
import logging
import math
from typing import Callable, NamedTuple, Sequence

import torch
from torch import Tensor, nn
import torch.nn.functional as F

from .geometry import Intrinsics, Pose, RayBundle, rays_for_camera

logger = logging.getLogger(__name__)

# [B, L, d] codes in W+; one independent code per generator level.
LatentCode = Tensor
# [B, 3, C, R, R]: XY, XZ and ZY feature planes.
TriPlane = Tensor
# [B, 3, 1, R, R] per-plane noise maps.
NoiseInput = Tensor


class RadianceSample(NamedTuple):
    sigma: Tensor  # [..., ] density >= 0
    rgb: Tensor  # [..., 3] in [0, 1]


class RenderOutput(NamedTuple):
    color: Tensor  # [B, 3, H, W], composited rgb in [0, 1]
    depth: Tensor  # [B, 1, H, W], distance along the ray
    accumulation: Tensor  # [B, 1, H, W], sum of compositing weights


RadianceField = Callable[[Tensor], RadianceSample]


@dataclass
class SamplingConfig:
    n_samples: int = 32
    near: float = 1.35
    far: float = 4.05
    stratified: bool = False
    far_gap: float | None = None  # last delta; None keeps the uniform spacing
    normalize_depth: bool = True
    weight_eps: float = 1e-3

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if not 0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got near={self.near}, far={self.far}")
        if self.far_gap is not None and self.far_gap <= 0:
            raise ValueError(f"far_gap must be positive, got {self.far_gap}")

    @property
    def spacing(self) -> float:
        return (self.far - self.near) / self.n_samples


SIGMA_ACTIVATIONS = {"softplus": F.softplus, "relu": F.relu}


@dataclass
class GeneratorConfig:
    n_levels: int = 8
    latent_dim: int = 64
    plane_channels: int = 16
    plane_resolution: int = 32
    base_resolution: int = 8
    decoder_hidden: int = 32
    box_half: float = 0.5
    # sigma pre-activation gets density_prior * (prior_radius - |p|) / box_half
    density_prior: float = 15.0
    prior_radius: float = 0.35
    # softplus keeps sigma > 0 (zero output decodes to ln 2); relu maps zero to zero
    sigma_activation: str = "softplus"
    noise_seed: int = 0

    def __post_init__(self) -> None:
        ratio = self.plane_resolution / self.base_resolution
        if ratio < 1 or not float(math.log2(ratio)).is_integer():
            raise ValueError(
                f"plane_resolution/base_resolution must be a power of two, got "
                f"{self.plane_resolution}/{self.base_resolution}"
            )
        if self.n_levels < 1 or self.latent_dim < 1:
            raise ValueError("n_levels and latent_dim must be positive")
        if self.sigma_activation not in SIGMA_ACTIVATIONS:
            raise ValueError(
                f"sigma_activation must be one of {sorted(SIGMA_ACTIVATIONS)}, got {self.sigma_activation!r}"
            )


def sample_depths(
    cfg: SamplingConfig,
    shape: Sequence[int],
    *,
    dtype=torch.float32,
    device=None,
    generator: torch.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Sample distances ``t`` ``[*shape, N]`` and their gaps ``delta``."""
    n = cfg.n_samples
    step = cfg.spacing
    idx = torch.arange(n, dtype=dtype, device=device)
    if cfg.stratified:
        jitter = torch.rand(*shape, n, dtype=dtype, device=device, generator=generator)
    else:
        jitter = torch.full((*shape, n), 0.5, dtype=dtype, device=device)
    t = cfg.near + (idx + jitter) * step
    last = cfg.far_gap if cfg.far_gap is not None else step
    deltas = torch.cat([t[..., 1:] - t[..., :-1], torch.full_like(t[..., :1], last)], dim=-1)
    return t, deltas


def compositing_weights(sigma: Tensor, deltas: Tensor) -> Tensor:
    """``T_i (1 - exp(-sigma_i delta_i))`` with ``T_i = exp(-sum_{j<i} sigma_j delta_j)``."""
    tau = sigma * deltas
    before = torch.cat([torch.zeros_like(tau[..., :1]), torch.cumsum(tau, dim=-1)[..., :-1]], dim=-1)
    return torch.exp(-before) * (1.0 - torch.exp(-tau))


def march(
    field: RadianceField,
    rays: RayBundle,
    cfg: SamplingConfig,
    *,
    generator: torch.Generator | None = None,
) -> RenderOutput:
    """Volume-render color and depth for a bundle of rays ``[B?, H, W, 3]``."""
    origins, directions = rays
    if origins.dim() == 3:
        origins, directions = origins.unsqueeze(0), directions.unsqueeze(0)
    B, H, W, _ = origins.shape
    n = cfg.n_samples
    t, deltas = sample_depths(
        cfg, (B, H * W), dtype=origins.dtype, device=origins.device, generator=generator
    )
    points = origins.reshape(B, H * W, 1, 3) + t.unsqueeze(-1) * directions.reshape(B, H * W, 1, 3)
    sample = field(points.reshape(B, H * W * n, 3))
    sigma = sample.sigma.reshape(B, H * W, n)
    rgb = sample.rgb.reshape(B, H * W, n, 3)

    weights = compositing_weights(sigma, deltas)
    color = (weights.unsqueeze(-1) * rgb).sum(dim=-2)
    acc = weights.sum(dim=-1)
    depth = (weights * t).sum(dim=-1)
    if cfg.normalize_depth:
        normalized = depth / acc.clamp_min(cfg.weight_eps)
        depth = torch.where(acc >= cfg.weight_eps, normalized, torch.full_like(depth, cfg.far))

    color = color.permute(0, 2, 1).reshape(B, 3, H, W)
    return RenderOutput(color, depth.reshape(B, 1, H, W), acc.reshape(B, 1, H, W))


def render_color(field: RadianceField, rays: RayBundle, cfg: SamplingConfig, **kwargs) -> Tensor:
    return march(field, rays, cfg, **kwargs).color


def render_depth(field: RadianceField, rays: RayBundle, cfg: SamplingConfig, **kwargs) -> Tensor:
    return march(field, rays, cfg, **kwargs).depth


def sample_planes(planes: TriPlane, coords: Tensor) -> Tensor:
    """Bilinearly sample ``[B, 3, C, R, R]`` planes at normalized ``[B, M, 3]`` coords.

    Plane nodes sit at ``-1 + 2k/(R-1)`` (corner-aligned grid). Returns ``[B, 3, M, C]``.
    """
    B, n_planes, C, R, _ = planes.shape
    M = coords.shape[1]
    x, y, z = coords.unbind(-1)
    grids = torch.stack(
        [torch.stack([x, y], dim=-1), torch.stack([x, z], dim=-1), torch.stack([z, y], dim=-1)], dim=1
    )
    feats = F.grid_sample(
        planes.reshape(B * n_planes, C, R, R),
        grids.reshape(B * n_planes, 1, M, 2),
        mode="bilinear",
        padding_mode="border",
        align_corners=True,
    )
    return feats.reshape(B, n_planes, C, M).permute(0, 1, 3, 2)


class _StyledConv(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, latent_dim: int, level: int, up: bool) -> None:
        super().__init__()
        self.level = level
        self.up = up
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.affine = nn.Linear(latent_dim, 2 * out_ch)

    def forward(self, x: Tensor, w: LatentCode) -> Tensor:
        if self.up:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.conv(x)
        scale, shift = self.affine(w[:, self.level]).chunk(2, dim=-1)
        x = x * (1 + scale[..., None, None]) + shift[..., None, None]
        return F.leaky_relu(x, 0.2)


class TriPlaneGenerator(nn.Module):
    """Latent-to-triplane network plus the small radiance decoder."""

    def __init__(self, cfg: GeneratorConfig | None = None) -> None:
        super().__init__()
        self.cfg = cfg = cfg or GeneratorConfig()
        width = 3 * cfg.plane_channels
        self.const = nn.Parameter(torch.randn(1, width, cfg.base_resolution, cfg.base_resolution) * 0.5)

        n_up = int(math.log2(cfg.plane_resolution // cfg.base_resolution))
        # odd levels upsample until the plane resolution is reached
        layers = []
        res = cfg.base_resolution
        for level in range(cfg.n_levels):
            up = level % 2 == 1 and res < cfg.plane_resolution
            layers.append(_StyledConv(width, width, cfg.latent_dim, level, up))
            res = res * 2 if up else res
        if res != cfg.plane_resolution:
            raise ValueError(
                f"{cfg.n_levels} levels cannot reach plane resolution {cfg.plane_resolution} "
                f"from {cfg.base_resolution}"
            )
        self.layers = nn.ModuleList(layers)
        self.to_planes = nn.Conv2d(width, width, 1)
        self.noise_strength = nn.Parameter(torch.full((1, 3, cfg.plane_channels, 1, 1), 0.1))

        g = torch.Generator().manual_seed(cfg.noise_seed)
        self.register_buffer(
            "const_noise", torch.randn(1, 3, 1, cfg.plane_resolution, cfg.plane_resolution, generator=g)
        )
        self.decoder = nn.Sequential(
            nn.Linear(cfg.plane_channels, cfg.decoder_hidden),
            nn.Softplus(),
            nn.Linear(cfg.decoder_hidden, 4),
        )

    # --- tri-plane synthesis ---
    def check_latent(self, w: LatentCode) -> None:
        L, d = self.cfg.n_levels, self.cfg.latent_dim
        if w.dim() != 3 or tuple(w.shape[1:]) != (L, d):
            raise ValueError(f"latent code must be [B, {L}, {d}], got {tuple(w.shape)}")

    def sample_latents(self, n: int, generator: torch.Generator | None = None) -> LatentCode:
        p = self.const
        return torch.randn(
            n, self.cfg.n_levels, self.cfg.latent_dim, generator=generator, dtype=p.dtype
        ).to(p.device)

    def default_noise(self, batch: int = 1) -> NoiseInput:
        return self.const_noise.expand(batch, -1, -1, -1, -1)

    def generate_triplane(self, w: LatentCode, noise: NoiseInput | None = None) -> TriPlane:
        self.check_latent(w)
        B = w.shape[0]
        R, C = self.cfg.plane_resolution, self.cfg.plane_channels
        if noise is None:
            noise = self.default_noise(B)
        if noise.dim() != 5 or tuple(noise.shape[1:]) != (3, 1, R, R) or noise.shape[0] not in (1, B):
            raise ValueError(f"noise must be [B, 3, 1, {R}, {R}], got {tuple(noise.shape)}")
        x = self.const.expand(B, -1, -1, -1)
        for layer in self.layers:
            x = layer(x, w)
        planes = self.to_planes(x).reshape(B, 3, C, R, R)
        return planes + self.noise_strength * noise

    # --- field evaluation ---
    def query_field(self, planes: TriPlane, points: Tensor) -> RadianceSample:
        """Decode density and color at world points ``[B, M, 3]`` (clamped to the box).

        Sigma is ``sigma_activation(raw + prior)``; ``density_prior = 0`` drops the prior.
        Under the default softplus a zero decoder gives sigma = ln 2 and rgb = 0.5.
        """
        box = self.cfg.box_half
        coords = points.clamp(-box, box) / box
        feats = sample_planes(planes, coords).sum(dim=1)
        out = self.decoder(feats)
        raw_sigma = out[..., 0]
        if self.cfg.density_prior:
            radius = points.norm(dim=-1)
            raw_sigma = raw_sigma + self.cfg.density_prior * (self.cfg.prior_radius - radius) / box
        sigma = SIGMA_ACTIVATIONS[self.cfg.sigma_activation](raw_sigma)
        return RadianceSample(sigma, torch.sigmoid(out[..., 1:]))

    def field(self, planes: TriPlane) -> RadianceField:
        return functools.partial(self.query_field, planes)

    # --- rendering ---
    def rays(self, poses: Pose | Sequence[Pose], K: Intrinsics, resolution: int) -> RayBundle:
        if isinstance(poses, Pose):
            poses = [poses]
        p = self.const
        bundles = [rays_for_camera(K, pose, resolution, resolution, dtype=p.dtype, device=p.device) for pose in poses]
        return RayBundle(
            torch.stack([b.origins for b in bundles]), torch.stack([b.directions for b in bundles])
        )

    def render(
        self,
        w: LatentCode,
        poses: Pose | Sequence[Pose],
        K: Intrinsics,
        resolution: int,
        *,
        noise: NoiseInput | None = None,
        sampling: SamplingConfig | None = None,
        rng: torch.Generator | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Render images in ``[-1, 1]`` and ray-distance depth maps.

        ``poses`` is one pose shared by the batch or one pose per latent code.
        """
        sampling = sampling or SamplingConfig()
        planes = self.generate_triplane(w, noise)
        rays = self.rays(poses, K, resolution)
        B = w.shape[0]
        if rays.origins.shape[0] == 1 and B > 1:
            rays = RayBundle(
                rays.origins.expand(B, -1, -1, -1), rays.directions.expand(B, -1, -1, -1)
            )
        elif rays.origins.shape[0] != B:
            raise ValueError(f"got {rays.origins.shape[0]} poses for a batch of {B} codes")
        out = march(self.field(planes), rays, sampling, generator=rng)
        return out.color * 2.0 - 1.0, out.depth

    def sample_synthetic_pair(
        self,
        w_synth: LatentCode,
        c_s: Pose | Sequence[Pose],
        c_t: Pose | Sequence[Pose],
        K: Intrinsics,
        resolution: int,
        *,
        sampling: SamplingConfig | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Two views of one latent code plus the source-view depth."""
        I_s, D_s = self.render(w_synth, c_s, K, resolution, sampling=sampling)
        I_t, _ = self.render(w_synth, c_t, K, resolution, sampling=sampling)
        return I_s, I_t, D_s


__all__ = [
    "LatentCode",
    "TriPlane",
    "NoiseInput",
    "RadianceSample",
    "RenderOutput",
    "SamplingConfig",
    "GeneratorConfig",
    "sample_depths",
    "compositing_weights",
    "march",
    "render_color",
    "render_depth",
    "sample_planes",
    "TriPlaneGenerator",
]
