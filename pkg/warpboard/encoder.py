"""Inversion encoder: image -> multi-level latent code."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import Tensor, nn
import torch.nn.functional as F


@dataclass
class EncoderConfig:
    resolution: int = 64
    base_channels: int = 32
    n_levels: int = 8
    latent_dim: int = 64
    pooled_size: int = 4
    coarse_fraction: float = 0.5
    mid_fraction: float = 0.25

    def __post_init__(self) -> None:
        if self.resolution % 8 or self.resolution // 8 < self.pooled_size:
            raise ValueError(
                f"resolution must be a multiple of 8 and at least {8 * self.pooled_size}, got {self.resolution}"
            )
        if self.coarse_fraction <= 0 or self.mid_fraction < 0 or self.coarse_fraction + self.mid_fraction > 1:
            raise ValueError(
                f"bad level split: coarse={self.coarse_fraction}, mid={self.mid_fraction}"
            )

    def level_split(self) -> tuple[int, int, int]:
        """Number of latent levels fed by the coarse, mid and fine features."""
        L = self.n_levels
        coarse = max(1, int(L * self.coarse_fraction))
        mid = int(L * self.mid_fraction)
        fine = L - coarse - mid
        if fine < 0:
            raise ValueError(f"level split does not fit {L} levels")
        return coarse, mid, fine


class FeaturePyramid(NamedTuple):
    coarse: Tensor  # [B, 4c, H/8, W/8]
    mid: Tensor  # [B, 2c, H/4, W/4]
    fine: Tensor  # [B, c, H/2, W/2]


def _down(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1),
        nn.LeakyReLU(0.2),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        nn.LeakyReLU(0.2),
    )


class _LevelHead(nn.Module):
    def __init__(self, channels: int, pooled: int, n_levels: int, latent_dim: int) -> None:
        super().__init__()
        self.n_levels = n_levels
        self.latent_dim = latent_dim
        self.pooled = pooled
        self.proj = nn.Linear(channels * pooled * pooled, n_levels * latent_dim)

    def forward(self, feats: Tensor) -> Tensor:
        x = F.adaptive_avg_pool2d(feats, self.pooled).flatten(1)
        return self.proj(x).reshape(-1, self.n_levels, self.latent_dim)


class LatentEncoder(nn.Module):
    """Strided convolution pyramid with coarse-to-low / fine-to-high level heads."""

    def __init__(self, cfg: EncoderConfig | None = None) -> None:
        super().__init__()
        self.cfg = cfg = cfg or EncoderConfig()
        c = cfg.base_channels
        self.stem = nn.Sequential(nn.Conv2d(3, c, 3, padding=1), nn.LeakyReLU(0.2))
        self.fine_stage = _down(c, c)
        self.mid_stage = _down(c, 2 * c)
        self.coarse_stage = _down(2 * c, 4 * c)

        n_coarse, n_mid, n_fine = cfg.level_split()
        heads = {"coarse": _LevelHead(4 * c, cfg.pooled_size, n_coarse, cfg.latent_dim)}
        if n_mid:
            heads["mid"] = _LevelHead(2 * c, cfg.pooled_size, n_mid, cfg.latent_dim)
        if n_fine:
            heads["fine"] = _LevelHead(c, cfg.pooled_size, n_fine, cfg.latent_dim)
        self.heads = nn.ModuleDict(heads)
        self.latent_avg = nn.Parameter(torch.zeros(1, cfg.n_levels, cfg.latent_dim))

    def pyramid(self, image: Tensor) -> FeaturePyramid:
        R = self.cfg.resolution
        if image.dim() != 4 or tuple(image.shape[1:]) != (3, R, R):
            raise ValueError(f"encoder expects [B, 3, {R}, {R}] images, got {tuple(image.shape)}")
        x = self.stem(image)
        fine = self.fine_stage(x)
        mid = self.mid_stage(fine)
        coarse = self.coarse_stage(mid)
        return FeaturePyramid(coarse, mid, fine)

    def forward(self, image: Tensor) -> Tensor:
        feats = self.pyramid(image)
        parts = [self.heads[name](getattr(feats, name)) for name in ("coarse", "mid", "fine") if name in self.heads]
        return torch.cat(parts, dim=1) + self.latent_avg

    def encode(self, image: Tensor) -> Tensor:
        return self(image)


__all__ = ["EncoderConfig", "FeaturePyramid", "LatentEncoder"]
