"""Optimization-based editing: latent+noise inversion, multi-view pivotal tuning, attribute edits."""
from __future__ import annotations

import copy
from dataclasses import dataclass
import logging
import math
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd
import torch
from torch import Tensor
import torch.nn.functional as F
from tqdm import tqdm

from .generator import SamplingConfig, TriPlaneGenerator
from .geometry import Intrinsics, Pose
from .pipeline import NovelView, WarpPipeline
from .training import TrainConfig, sample_novel_pose

logger = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    """The objective became non-finite."""


@dataclass
class OptConfig:
    invert_steps: int = 500
    tune_steps: int = 300
    lr_latent: float = 1e-2
    lr_generator: float = 1e-3
    lambda_noise: float = 1e3
    lambda_mv: float = 1.0
    lambda_l2: float = 1.0
    lambda_lpips: float = 1.0
    n_views: int = 4
    tolerance: float = 1e-10
    min_lr: float = 1e-7
    seed: int = 0

    def __post_init__(self) -> None:
        if self.invert_steps <= 0 or self.tune_steps <= 0:
            raise ValueError("invert_steps and tune_steps must be positive")
        for name in ("lambda_noise", "lambda_mv", "lambda_l2", "lambda_lpips"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.n_views < 0:
            raise ValueError(f"n_views must be >= 0, got {self.n_views}")


@dataclass
class EditDirection:
    direction: Tensor  # [L, d]
    alpha: float = 1.0

    def apply(self, w: Tensor) -> Tensor:
        return w + self.alpha * self.direction.to(w)


def load_direction(path: str | Path, n_levels: int, latent_dim: int) -> Tensor:
    """Edit direction from ``.npy`` or whitespace text, shaped ``[n_levels, latent_dim]``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"direction file not found: {path}")
    arr = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=2)
    arr = np.asarray(arr, dtype=np.float32)
    if arr.size != n_levels * latent_dim:
        raise ValueError(
            f"direction {path} has {arr.size} values, expected {n_levels}x{latent_dim}"
        )
    if not np.isfinite(arr).all():
        raise ValueError(f"direction {path} has non-finite values")
    return torch.from_numpy(arr.reshape(n_levels, latent_dim))


def noise_regularizer(noise: Tensor) -> Tensor:
    """Mean square plus multi-scale neighbour autocorrelation of ``[B, 3, 1, R, R]`` noise maps."""
    maps = noise.reshape(-1, 1, *noise.shape[-2:])
    reg = maps.square().mean()
    x = maps
    while True:
        reg = reg + (x * torch.roll(x, shifts=1, dims=3)).mean() ** 2
        reg = reg + (x * torch.roll(x, shifts=1, dims=2)).mean() ** 2
        if x.shape[2] <= 8:
            break
        x = F.avg_pool2d(x, kernel_size=2)
    return reg


def _descend(
    objective: Callable[[], Tensor],
    snapshot: Callable[[], Any],
    restore: Callable[[Any], None],
    optimizer: torch.optim.Optimizer,
    steps: int,
    cfg: OptConfig,
    desc: str,
) -> tuple[float, list[dict[str, float]], int]:
    """Gradient descent that only keeps non-increasing iterates.

    A step that raises the objective is undone and the learning rate halved.
    Returns the best objective, the accepted-iterate history and the number of
    optimizer steps taken.
    """
    best_loss, best_state = math.inf, None
    history: list[dict[str, float]] = []
    taken = backoffs = 0
    restored = False
    for _ in tqdm(range(steps + 1), desc=desc, leave=False):
        loss = objective()
        value = float(loss)
        if not math.isfinite(value):
            raise OptimizationError(f"{desc}: objective became non-finite after {taken} steps")
        if value > best_loss:
            restore(best_state)
            restored = True
            backoffs += 1
            for group in optimizer.param_groups:
                group["lr"] *= 0.5
            if optimizer.param_groups[0]["lr"] < cfg.min_lr:
                break
            continue
        best_loss, best_state = value, snapshot()
        lr = optimizer.param_groups[0]["lr"]
        if restored:
            # same iterate as the last row, only the step size changed
            history[-1]["lr"] = lr
        else:
            history.append({"step": taken, "loss": value, "lr": lr})
        restored = False
        if value <= cfg.tolerance or taken >= steps:
            break
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        taken += 1
    if best_state is not None:
        restore(best_state)
    if backoffs:
        logger.warning("%s: %d step-size backoffs, final lr %.2e", desc, backoffs, optimizer.param_groups[0]["lr"])
    return best_loss, history, taken


@dataclass
class InversionResult:
    w: Tensor
    noise: Tensor
    loss: float
    steps: int
    history: pd.DataFrame


def invert(
    image: Tensor,
    pose: Pose,
    generator: TriPlaneGenerator,
    K: Intrinsics,
    cfg: OptConfig | None = None,
    *,
    w_init: Tensor | None = None,
    noise_init: Tensor | None = None,
    sampling: SamplingConfig | None = None,
) -> InversionResult:
    """Jointly fit a latent code and noise maps so the render at ``pose`` matches ``image``."""
    cfg = cfg or OptConfig()
    resolution = image.shape[-1]
    p = generator.const
    if w_init is None:
        w_init = p.new_zeros(1, generator.cfg.n_levels, generator.cfg.latent_dim)
    if noise_init is None:
        noise_init = generator.default_noise(1)
    w = w_init.detach().clone().requires_grad_(True)
    noise = noise_init.detach().clone().requires_grad_(True)
    flags = [q.requires_grad for q in generator.parameters()]
    generator.requires_grad_(False)
    optimizer = torch.optim.Adam([w, noise], lr=cfg.lr_latent)

    def objective() -> Tensor:
        recon, _ = generator.render(w, pose, K, resolution, noise=noise, sampling=sampling)
        loss = F.mse_loss(recon, image)
        if cfg.lambda_noise:
            loss = loss + cfg.lambda_noise * noise_regularizer(noise)
        return loss

    def snapshot():
        return w.detach().clone(), noise.detach().clone()

    @torch.no_grad()
    def restore(state) -> None:
        w.copy_(state[0])
        noise.copy_(state[1])

    try:
        loss, history, steps = _descend(objective, snapshot, restore, optimizer, cfg.invert_steps, cfg, "invert")
    finally:
        for q, flag in zip(generator.parameters(), flags):
            q.requires_grad_(flag)
    logger.info("inversion finished: loss=%.6f after %d steps", loss, steps)
    return InversionResult(w.detach(), noise.detach(), loss, steps, pd.DataFrame(history, columns=["step", "loss", "lr"]))


def _different(a: Pose, b: Pose, tol: float = 1e-6) -> bool:
    return not torch.allclose(a.matrix(), b.matrix(), atol=tol)


@torch.no_grad()
def multiview_set(
    image: Tensor,
    pose: Pose,
    pipeline: WarpPipeline,
    n: int,
    *,
    rng: np.random.Generator | None = None,
    train_cfg: TrainConfig | None = None,
) -> list[tuple[Tensor, Pose]]:
    """Pseudo ground truth: ``n`` novel views synthesized by the warp-and-inpaint flow."""
    rng = rng if rng is not None else np.random.default_rng(0)
    train_cfg = train_cfg or TrainConfig()
    w_plus = pipeline.encode(image)
    views = []
    while len(views) < n:
        c = sample_novel_pose(rng, train_cfg, pipeline.camera)
        if not _different(c, pose):
            continue
        views.append((pipeline.novel_view(image, pose, c, w_plus=w_plus).inpainted, c))
    return views


@dataclass
class TuneResult:
    generator: TriPlaneGenerator
    loss_before: float
    loss_after: float
    steps: int
    history: pd.DataFrame


def pivotal_tune(
    generator: TriPlaneGenerator,
    w_opt: Tensor,
    image: Tensor,
    pose: Pose,
    views: Sequence[tuple[Tensor, Pose]],
    K: Intrinsics,
    cfg: OptConfig | None = None,
    *,
    noise: Tensor | None = None,
    perceptual: Callable[[Tensor, Tensor], Tensor] | None = None,
    sampling: SamplingConfig | None = None,
) -> TuneResult:
    """Fine-tune a copy of the generator around the frozen code on the input and pseudo views."""
    cfg = cfg or OptConfig()
    resolution = image.shape[-1]
    tuned = copy.deepcopy(generator)
    tuned.requires_grad_(True)
    w_opt = w_opt.detach()
    optimizer = torch.optim.Adam(tuned.parameters(), lr=cfg.lr_generator)

    def loss_g(recon: Tensor, target: Tensor) -> Tensor:
        loss = cfg.lambda_l2 * F.mse_loss(recon, target)
        if cfg.lambda_lpips and perceptual is not None:
            loss = loss + cfg.lambda_lpips * perceptual(recon, target)
        return loss

    def input_view_loss() -> Tensor:
        recon, _ = tuned.render(w_opt, pose, K, resolution, noise=noise, sampling=sampling)
        return loss_g(recon, image)

    def objective() -> Tensor:
        loss = input_view_loss()
        for target, c in views:
            recon, _ = tuned.render(w_opt, c, K, resolution, noise=noise, sampling=sampling)
            loss = loss + cfg.lambda_mv * loss_g(recon, target)
        return loss

    def snapshot():
        return copy.deepcopy(tuned.state_dict())

    def restore(state) -> None:
        tuned.load_state_dict(state)

    with torch.no_grad():
        before = float(input_view_loss())
    _, history, steps = _descend(objective, snapshot, restore, optimizer, cfg.tune_steps, cfg, "pivotal-tune")
    with torch.no_grad():
        after = float(input_view_loss())
    tuned.requires_grad_(False)
    logger.info("pivotal tuning: input-view loss %.6f -> %.6f (%d views)", before, after, len(views))
    return TuneResult(tuned, before, after, steps, pd.DataFrame(history, columns=["step", "loss", "lr"]))


@torch.no_grad()
def edit(
    w_opt: Tensor,
    direction: Tensor,
    alpha: float,
    pose: Pose,
    K: Intrinsics,
    generator: TriPlaneGenerator,
    resolution: int,
    *,
    noise: Tensor | None = None,
    sampling: SamplingConfig | None = None,
) -> Tensor:
    """Render the code shifted by ``alpha`` along ``direction`` at ``pose``."""
    shifted = EditDirection(direction, alpha).apply(w_opt)
    image, _ = generator.render(shifted, pose, K, resolution, noise=noise, sampling=sampling)
    return image


@torch.no_grad()
def reference_style_synthesize(
    source: Tensor,
    source_pose: Pose,
    reference: Tensor,
    reference_pose: Pose,
    pipeline: WarpPipeline,
) -> NovelView:
    """Move the source into the reference's camera and inpaint with the reference's code.

    Depth and warp come from the source, so visible pixels do not depend on the
    reference image; the hole fill and the modulation use the reference code.
    The edited image is ``.inpainted`` of the returned view.
    """
    w_source = pipeline.encode(source)
    w_reference = pipeline.encode(reference)
    return pipeline.novel_view(source, source_pose, reference_pose, w_plus=w_source, style_code=w_reference)


__all__ = [
    "OptimizationError",
    "OptConfig",
    "EditDirection",
    "load_direction",
    "noise_regularizer",
    "InversionResult",
    "invert",
    "multiview_set",
    "TuneResult",
    "pivotal_tune",
    "edit",
    "reference_style_synthesize",
]
