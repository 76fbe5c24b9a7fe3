"""Depth-guided forward warping with softmax splatting.

Source pixels are lifted with their z-depth, moved into the target camera and
splatted with a bilinear footprint. Collisions are blended with the importance
``exp(-beta * z_target)`` so nearer surfaces win. Target pixels whose
accumulated footprint stays below ``hole_threshold`` are holes (mask 1, value 0).
"""
from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import NamedTuple, Sequence

import torch
from torch import Tensor

from .geometry import Intrinsics, Pose, RelativePose, camera_directions, mirror_pose, pixel_centers

logger = logging.getLogger(__name__)

# [B, 1, H, W] z-depth along the optical axis
DepthMap = Tensor
# [B, 1, H, W] in {0, 1}; 1 marks holes
OcclusionMask = Tensor

_CORNERS = ((0, 0), (1, 0), (0, 1), (1, 1))


@dataclass
class WarpConfig:
    far: float = 4.05
    beta_scale: float = 10.0
    hole_threshold: float = 0.05
    snap_tolerance: float = 1e-4  # pixels

    def __post_init__(self) -> None:
        if self.far <= 0:
            raise ValueError(f"far must be positive, got {self.far}")
        if not 0 < self.hole_threshold <= 1:
            raise ValueError(f"hole_threshold must lie in (0, 1], got {self.hole_threshold}")

    @property
    def beta(self) -> float:
        return self.beta_scale / self.far


class WarpResult(NamedTuple):
    image: Tensor  # [B, C, H, W], holes set to 0
    mask: OcclusionMask
    weights: Tensor  # [B, 1, H, W] accumulated footprint
    depth: DepthMap  # splatted target z-depth, 0 on holes


def _snap(coord: Tensor, tol: float) -> Tensor:
    nearest = coord.detach().round()
    close = (coord.detach() - nearest).abs() < tol
    return torch.where(close, coord + (nearest - coord).detach(), coord)


def softmax_splat(
    values: Tensor,
    px: Tensor,
    py: Tensor,
    z: Tensor,
    size: tuple[int, int],
    *,
    beta: float,
    valid: Tensor | None = None,
    snap_tolerance: float = 1e-4,
) -> tuple[Tensor, Tensor]:
    """Splat ``values [B, C, H, W]`` to pixel positions ``(px, py) [B, H, W]``.

    Positions are in target pixel-index units (pixel ``i`` has its center at
    ``i``). Returns the normalized splat ``[B, C, Ht, Wt]`` and the accumulated
    footprint ``[B, 1, Ht, Wt]``. Accumulation goes through
    ``index_put_(accumulate=True)``, which has a deterministic kernel under
    ``torch.use_deterministic_algorithms``.
    """
    B, C, H, W = values.shape
    Ht, Wt = size
    if valid is None:
        valid = torch.ones_like(z, dtype=torch.bool)
    valid = valid.bool() & torch.isfinite(px) & torch.isfinite(py) & torch.isfinite(z)

    px = _snap(torch.where(valid, px, torch.zeros_like(px)), snap_tolerance)
    py = _snap(torch.where(valid, py, torch.zeros_like(py)), snap_tolerance)
    x0 = px.detach().floor()
    y0 = py.detach().floor()
    fx = px - x0
    fy = py - y0

    # importance relative to the nearest valid sample keeps exp() in range
    z = torch.where(valid, z, torch.zeros_like(z))
    z_ref = z.detach()[valid].min() if bool(valid.any()) else z.new_zeros(())
    importance = torch.where(valid, torch.exp(-beta * (z - z_ref)), torch.zeros_like(z))

    batch = torch.arange(B, device=values.device).view(B, 1, 1)
    feats = values.permute(0, 2, 3, 1).reshape(-1, C)
    indices, footprints = [], []
    for dx, dy in _CORNERS:
        xi = (x0 + dx).long()
        yi = (y0 + dy).long()
        inside = valid & (xi >= 0) & (xi < Wt) & (yi >= 0) & (yi < Ht)
        wx = fx if dx else 1.0 - fx
        wy = fy if dy else 1.0 - fy
        footprints.append((wx * wy * inside).reshape(-1))
        flat = (batch * Ht + yi.clamp(0, Ht - 1)) * Wt + xi.clamp(0, Wt - 1)
        indices.append(flat.reshape(-1))

    n_target = B * Ht * Wt
    importance = importance.reshape(-1)
    denom = values.new_zeros(n_target)
    coverage = values.new_zeros(n_target)
    for idx, foot in zip(indices, footprints):
        denom = denom.index_put((idx,), foot * importance, accumulate=True)
        coverage = coverage.index_put((idx,), foot, accumulate=True)

    out = values.new_zeros(n_target, C)
    for idx, foot in zip(indices, footprints):
        w = foot * importance / denom[idx].clamp_min(torch.finfo(values.dtype).tiny)
        out = out.index_put((idx,), w.unsqueeze(-1) * feats, accumulate=True)

    out = out.reshape(B, Ht, Wt, C).permute(0, 3, 1, 2)
    return out, coverage.reshape(B, 1, Ht, Wt)


def _stack_relative(rel: RelativePose | Sequence[RelativePose], batch: int, like: Tensor) -> tuple[Tensor, Tensor]:
    rels = [rel] * batch if isinstance(rel, RelativePose) else list(rel)
    if len(rels) != batch:
        raise ValueError(f"got {len(rels)} relative poses for a batch of {batch}")
    R = torch.stack([r.R for r in rels]).to(dtype=like.dtype, device=like.device)
    t = torch.stack([r.t for r in rels]).to(dtype=like.dtype, device=like.device)
    return R, t


def forward_warp(
    image: Tensor,
    depth: DepthMap,
    rel: RelativePose | Sequence[RelativePose],
    K: Intrinsics,
    cfg: WarpConfig | None = None,
    *,
    valid: Tensor | None = None,
) -> WarpResult:
    """Warp ``image [B, C, H, W]`` with z-depth ``[B, 1, H, W]`` through ``rel``.

    ``valid [B, 1, H, W]`` optionally excludes source pixels from splatting.
    """
    cfg = cfg or WarpConfig()
    B, C, H, W = image.shape
    if depth.shape != (B, 1, H, W):
        raise ValueError(f"depth must be {(B, 1, H, W)}, got {tuple(depth.shape)}")
    if bool((depth <= 0).any()):
        raise ValueError("forward_warp needs strictly positive depth")

    u, v = pixel_centers(H, W, dtype=image.dtype, device=image.device)
    z_src = depth[:, 0]
    points = camera_directions(K, u, v).unsqueeze(0) * z_src.unsqueeze(-1)  # [B, H, W, 3]
    R, t = _stack_relative(rel, B, image)
    moved = torch.einsum("bij,bhwj->bhwi", R, points) + t.view(B, 1, 1, 3)

    z_tgt = -moved[..., 2]
    in_front = z_tgt > 1e-6
    safe = torch.where(in_front, z_tgt, torch.ones_like(z_tgt))
    u_t = K.cx + K.fx * moved[..., 0] / safe
    v_t = K.cy - K.fy * moved[..., 1] / safe
    px = u_t * W - 0.5
    py = v_t * H - 0.5

    keep = in_front if valid is None else in_front & (valid[:, 0] > 0.5)
    payload = torch.cat([image, z_tgt.unsqueeze(1)], dim=1)
    splat, coverage = softmax_splat(
        payload, px, py, z_tgt, (H, W), beta=cfg.beta, valid=keep, snap_tolerance=cfg.snap_tolerance
    )
    mask = (coverage < cfg.hole_threshold).to(image.dtype)
    logger.debug("forward warp: hole ratio %.3f", float(mask.mean()))
    keep_px = 1.0 - mask
    return WarpResult(splat[:, :C] * keep_px, mask, coverage, splat[:, C:] * keep_px)


def fill_depth(warped: WarpResult, fallback: DepthMap) -> DepthMap:
    """Splatted depth with holes taken from ``fallback``."""
    return torch.where(warped.mask > 0.5, fallback, warped.depth)


def initial_fill(warped: WarpResult, novel_recon: Tensor) -> Tensor:
    """Holes replaced by the GAN reconstruction, visible pixels untouched."""
    if warped.image.shape != novel_recon.shape:
        raise ValueError(
            f"warped image {tuple(warped.image.shape)} and reconstruction "
            f"{tuple(novel_recon.shape)} differ"
        )
    return warped.image + warped.mask * novel_recon


def mirror_inputs(image: Tensor, depth: DepthMap, pose: Pose) -> tuple[Tensor, DepthMap, Pose]:
    return image.flip(-1), depth.flip(-1), mirror_pose(pose)


__all__ = [
    "DepthMap",
    "OcclusionMask",
    "WarpConfig",
    "WarpResult",
    "softmax_splat",
    "forward_warp",
    "fill_depth",
    "initial_fill",
    "mirror_inputs",
]
