"""Training loops: the inversion encoder, then the inpainting network against a discriminator."""
from __future__ import annotations

from dataclasses import dataclass, replace
import logging
import math
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np
import pandas as pd
import torch
from torch import Tensor, nn
from tqdm import tqdm

from .checkpoint import load_checkpoint, save_checkpoint
from .data import PosedImage
from .encoder import LatentEncoder
from .generator import SamplingConfig, TriPlaneGenerator
from .geometry import Pose, distance_to_zdepth
from .losses import (
    Extractors,
    LossWeights,
    SVINetBatch,
    loss_adv_d,
    loss_svinet_total,
    loss_wplus,
    r1_grad_norms,
)
from .pipeline import CameraConfig, Inpainter, NovelView, ReWarp, WarpPipeline
from .svinet import SVINet

logger = logging.getLogger(__name__)

# final weights of each stage inside a checkpoint directory
CHECKPOINT_FILES = {
    "generator": "generator.wbck",
    "encoder": "encoder.wbck",
    "svinet": "svinet.wbck",
}


@dataclass
class TrainConfig:
    encoder_iterations: int = 20_000
    svinet_iterations: int = 10_000
    encoder_batch: int = 4
    svinet_batch: int = 2
    lr_encoder: float = 1e-4
    lr_svinet: float = 1e-3
    lr_discriminator: float = 1e-4
    optimizer: str = "adam"  # or "ranger" (RAdam + lookahead) for the encoder
    yaw_range: float = 0.6
    pitch_range: float = 0.3
    stratified_sampling: bool = True
    use_modulation: bool = True
    use_consistency_loss: bool = True
    use_symmetry: bool = True
    use_synth_data: bool = True
    use_real_data: bool = True
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 100

    def __post_init__(self) -> None:
        for name in ("encoder_iterations", "svinet_iterations", "encoder_batch", "svinet_batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr_encoder", "lr_svinet", "lr_discriminator"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.optimizer not in ("adam", "ranger"):
            raise ValueError(f"optimizer must be 'adam' or 'ranger', got {self.optimizer!r}")
        if not 0 <= self.pitch_range < math.pi / 2:
            raise ValueError(f"pitch_range must lie in [0, pi/2), got {self.pitch_range}")


class Discriminator(nn.Module):
    """Small convolutional real/fake classifier with probability output."""

    def __init__(self, resolution: int = 64, base_channels: int = 16, clamp: float = 1e-6) -> None:
        super().__init__()
        self.clamp = clamp
        layers: list[nn.Module] = []
        in_ch, ch, res = 3, base_channels, resolution
        while res > 4:
            layers += [nn.Conv2d(in_ch, ch, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch, ch, res = ch, min(ch * 2, 8 * base_channels), res // 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(in_ch * res * res, 1)

    def forward(self, image: Tensor) -> Tensor:
        logits = self.head(self.features(image).flatten(1)).squeeze(-1)
        return torch.sigmoid(logits).clamp(self.clamp, 1.0 - self.clamp)


class Lookahead:
    """Lookahead wrapper: every ``k`` steps slow weights move ``alpha`` towards the fast ones."""

    def __init__(self, base: torch.optim.Optimizer, k: int = 6, alpha: float = 0.5) -> None:
        self.base = base
        self.k = k
        self.alpha = alpha
        self.steps = 0
        self.slow = [[p.detach().clone() for p in group["params"]] for group in base.param_groups]

    @property
    def param_groups(self):
        return self.base.param_groups

    def zero_grad(self, set_to_none: bool = True) -> None:
        self.base.zero_grad(set_to_none=set_to_none)

    @torch.no_grad()
    def step(self) -> None:
        self.base.step()
        self.steps += 1
        if self.steps % self.k:
            return
        for group, slow in zip(self.base.param_groups, self.slow):
            for p, s in zip(group["params"], slow):
                s.add_(p - s, alpha=self.alpha)
                p.copy_(s)

    def state_dict(self) -> dict[str, Any]:
        return {"base": self.base.state_dict(), "steps": self.steps, "slow": self.slow}

    def load_state_dict(self, state: dict[str, Any]) -> None:
        self.base.load_state_dict(state["base"])
        self.steps = int(state["steps"])
        with torch.no_grad():
            for mine, theirs in zip(self.slow, state["slow"]):
                for s, t in zip(mine, theirs):
                    s.copy_(t)


def make_optimizer(params: Iterable[Tensor], name: str, lr: float):
    params = list(params)
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    if name == "ranger":
        return Lookahead(torch.optim.RAdam(params, lr=lr))
    raise ValueError(f"unknown optimizer {name!r}")


def sample_novel_pose(rng: np.random.Generator, cfg: TrainConfig, camera: CameraConfig) -> Pose:
    yaw = rng.uniform(-cfg.yaw_range, cfg.yaw_range)
    pitch = rng.uniform(-cfg.pitch_range, cfg.pitch_range)
    return camera.pose(float(yaw), float(pitch))


def sample_latents(rng: np.random.Generator, n: int, generator: TriPlaneGenerator) -> Tensor:
    p = generator.const
    values = rng.standard_normal((n, generator.cfg.n_levels, generator.cfg.latent_dim))
    return torch.from_numpy(values).to(dtype=p.dtype, device=p.device)


@torch.no_grad()
def synthetic_dataset(
    generator: TriPlaneGenerator,
    camera: CameraConfig,
    n: int,
    *,
    cfg: TrainConfig | None = None,
    seed: int = 10_000,
    sampling: SamplingConfig | None = None,
) -> list[PosedImage]:
    """Renders of held-out latent codes that stand in for real photographs."""
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(seed)
    K = camera.intrinsics()
    records = []
    for i in range(n):
        pose = sample_novel_pose(rng, cfg, camera)
        w = sample_latents(rng, 1, generator)
        image, _ = generator.render(w, pose, K, camera.resolution, sampling=sampling)
        records.append(PosedImage(f"synthetic_{i:05d}.png", image[0].clamp(-1, 1), pose, K))
    return records


# --- checkpoint plumbing ---


def _save_state(
    path: Path,
    modules: dict[str, nn.Module],
    optimizers: dict[str, Any],
    np_rng: np.random.Generator,
    torch_rng: torch.Generator,
    iteration: int,
    history: list[dict[str, float]],
    config_snapshot: dict[str, Any] | None,
) -> None:
    state = {
        "models": {name: m.state_dict() for name, m in modules.items()},
        "optimizers": {name: opt.state_dict() for name, opt in optimizers.items()},
        "torch_rng": torch_rng.get_state(),
    }
    metadata = {
        "iteration": iteration,
        "numpy_rng": np_rng.bit_generator.state,
        "history": history,
        "config": config_snapshot or {},
    }
    save_checkpoint(path, state, metadata)


def _restore_state(
    path: Path,
    modules: dict[str, nn.Module],
    optimizers: dict[str, Any],
    np_rng: np.random.Generator,
    torch_rng: torch.Generator,
) -> tuple[int, list[dict[str, float]]]:
    ckpt = load_checkpoint(path)
    for name, m in modules.items():
        m.load_state_dict(ckpt.state["models"][name])
    for name, opt in optimizers.items():
        opt.load_state_dict(ckpt.state["optimizers"][name])
    torch_rng.set_state(ckpt.state["torch_rng"])
    np_rng.bit_generator.state = ckpt.metadata["numpy_rng"]
    logger.info("resumed from %s at iteration %d", path, ckpt.metadata["iteration"])
    return int(ckpt.metadata["iteration"]), list(ckpt.metadata["history"])


def load_models(path: str | Path, modules: dict[str, nn.Module]) -> dict[str, Any]:
    """Load model weights from a training checkpoint; returns its metadata."""
    ckpt = load_checkpoint(path)
    for name, m in modules.items():
        if name not in ckpt.state["models"]:
            raise ValueError(f"checkpoint {path} has no weights for {name!r}")
        m.load_state_dict(ckpt.state["models"][name])
    return ckpt.metadata


def save_models(path: str | Path, modules: dict[str, nn.Module], metadata: dict[str, Any] | None = None) -> Path:
    """Weights-only checkpoint readable by :func:`load_models`."""
    return save_checkpoint(path, {"models": {name: m.state_dict() for name, m in modules.items()}}, metadata)


def _device_of(module: nn.Module) -> torch.device:
    return next(module.parameters()).device


# --- encoder ---


@dataclass
class EncoderRun:
    encoder: LatentEncoder
    history: pd.DataFrame


def train_encoder(
    dataset: Sequence[PosedImage],
    generator: TriPlaneGenerator,
    encoder: LatentEncoder,
    cfg: TrainConfig,
    *,
    camera: CameraConfig | None = None,
    sampling: SamplingConfig | None = None,
    weights: LossWeights | None = None,
    extractors: Extractors | None = None,
    checkpoint_dir: str | Path | None = None,
    resume: str | Path | None = None,
    config_snapshot: dict[str, Any] | None = None,
) -> EncoderRun:
    """Fit the encoder so that rendering its code at the input pose reproduces the input."""
    if not dataset:
        raise ValueError("train_encoder needs a non-empty dataset")
    camera = camera or CameraConfig()
    weights = weights or LossWeights()
    sampling = replace(sampling or SamplingConfig(), stratified=cfg.stratified_sampling)
    device = _device_of(encoder)
    K = camera.intrinsics()

    generator.requires_grad_(False)
    np_rng = np.random.default_rng(cfg.seed)
    torch_rng = torch.Generator(device=device).manual_seed(cfg.seed)
    optimizer = make_optimizer(encoder.parameters(), cfg.optimizer, cfg.lr_encoder)
    modules, optimizers = {"encoder": encoder}, {"encoder": optimizer}

    start, history = 0, []
    if resume is not None:
        start, history = _restore_state(Path(resume), modules, optimizers, np_rng, torch_rng)

    bar = tqdm(range(start, cfg.encoder_iterations), desc="encoder", initial=start, total=cfg.encoder_iterations)
    for it in bar:
        idx = np_rng.integers(0, len(dataset), size=cfg.encoder_batch)
        images = torch.stack([dataset[i].image for i in idx]).to(device)
        poses = [dataset[i].pose for i in idx]

        w = encoder(images)
        recon, _ = generator.render(w, poses, K, camera.resolution, sampling=sampling, rng=torch_rng)
        loss = loss_wplus(recon, images, weights, extractors)
        if not torch.isfinite(loss):
            raise RuntimeError(f"encoder loss became non-finite at iteration {it}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        history.append({"iteration": it, "loss": float(loss)})
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            recent = np.mean([h["loss"] for h in history[-cfg.log_every :]])
            logger.info("encoder it=%d loss=%.5f", it + 1, recent)
            bar.set_postfix(loss=f"{recent:.4f}")
        if checkpoint_dir is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            _save_state(
                Path(checkpoint_dir) / f"encoder_{it + 1:06d}.wbck",
                modules, optimizers, np_rng, torch_rng, it + 1, history, config_snapshot,
            )
    return EncoderRun(encoder, pd.DataFrame(history, columns=["iteration", "loss"]))


# --- inpainting network ---


class SVINetCriterion:
    """Weighted inpainting objective bound to the frozen encoder and the discriminator."""

    def __init__(
        self,
        weights: LossWeights,
        extractors: Extractors | None,
        encoder: nn.Module,
        discriminator: nn.Module,
        *,
        use_consistency_loss: bool = True,
    ) -> None:
        self.weights = weights
        self.extractors = extractors
        self.encoder = encoder
        self.discriminator = discriminator
        self.use_consistency_loss = use_consistency_loss

    def __call__(self, batch: SVINetBatch) -> tuple[Tensor, dict[str, float]]:
        return loss_svinet_total(
            batch,
            self.weights,
            self.extractors,
            self.encoder,
            self.discriminator,
            use_consistency_loss=self.use_consistency_loss,
        )


class StepResult(NamedTuple):
    batch: SVINetBatch
    total: Tensor | None
    parts: dict[str, float]
    view: NovelView
    back: ReWarp | None


def svinet_step_real(
    pipeline: WarpPipeline,
    image: Tensor,
    pose: Pose | Sequence[Pose],
    novel_pose: Pose | Sequence[Pose],
    *,
    criterion: SVINetCriterion | None = None,
    rng: torch.Generator | None = None,
    inpainter: Inpainter | None = None,
    use_modulation: bool | None = None,
    use_symmetry: bool | None = None,
) -> StepResult:
    """Forward flow to the novel view, then the re-warp back to the input view."""
    flags = dict(rng=rng, inpainter=inpainter, use_modulation=use_modulation, use_symmetry=use_symmetry)
    view = pipeline.novel_view(image, pose, novel_pose, **flags)
    back = pipeline.rewarp(view, pose, novel_pose, **flags)
    batch = SVINetBatch(novel=view.inpainted, rewarp=back.inpainted, real=image)
    total, parts = criterion(batch) if criterion is not None else (None, {})
    return StepResult(batch, total, parts, view, back)


def svinet_step_synth(
    pipeline: WarpPipeline,
    w_synth: Tensor,
    c_s: Pose | Sequence[Pose],
    c_t: Pose | Sequence[Pose],
    *,
    criterion: SVINetCriterion | None = None,
    rng: torch.Generator | None = None,
    inpainter: Inpainter | None = None,
    use_modulation: bool | None = None,
    use_symmetry: bool | None = None,
) -> StepResult:
    """Warp a rendered source view to the target view with its true depth and inpaint."""
    with torch.no_grad():
        I_s, I_t, D_s = pipeline.generator.sample_synthetic_pair(
            w_synth, c_s, c_t, pipeline.K, pipeline.resolution, sampling=pipeline.sampling
        )
        depth = distance_to_zdepth(D_s, pipeline.K)
    view = pipeline.novel_view(
        I_s, c_s, c_t,
        depth=depth, rng=rng, inpainter=inpainter,
        use_modulation=use_modulation, use_symmetry=use_symmetry,
    )
    batch = SVINetBatch(synth=view.inpainted, synth_target=I_t)
    total, parts = criterion(batch) if criterion is not None else (None, {})
    return StepResult(batch, total, parts, view, None)


def merge_batches(*batches: SVINetBatch) -> SVINetBatch:
    merged = SVINetBatch()
    for b in batches:
        for name in ("novel", "rewarp", "real", "synth", "synth_target"):
            value = getattr(b, name)
            if value is None:
                continue
            current = getattr(merged, name)
            setattr(merged, name, value if current is None else torch.cat([current, value]))
    return merged


def discriminator_step(
    discriminator: nn.Module,
    optimizer: torch.optim.Optimizer | None,
    real: Tensor,
    fake: Tensor,
    weights: LossWeights,
) -> float:
    """One update on the discriminator objective; the gradient penalty uses real inputs."""
    scores_real, norms = r1_grad_norms(discriminator, real)
    scores_fake = discriminator(fake.detach())
    loss = loss_adv_d(scores_real, scores_fake, norms, weights.gamma, squared=weights.squared_r1)
    if optimizer is not None:
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
    return float(loss)


@dataclass
class SVINetRun:
    svinet: SVINet
    discriminator: Discriminator
    history: pd.DataFrame


HISTORY_COLUMNS = ["iteration", "rec", "consistency", "adv_g", "total", "d_loss"]


def train_svinet(
    dataset: Sequence[PosedImage],
    pipeline: WarpPipeline,
    discriminator: Discriminator,
    cfg: TrainConfig,
    *,
    weights: LossWeights | None = None,
    extractors: Extractors | None = None,
    checkpoint_dir: str | Path | None = None,
    resume: str | Path | None = None,
    config_snapshot: dict[str, Any] | None = None,
) -> SVINetRun:
    """Alternate inpainting-network and discriminator updates.

    Each iteration runs one real-data group and one synthetic group (1:1) when
    both sources are enabled. The encoder and generator stay frozen.
    """
    if cfg.use_real_data and not dataset:
        raise ValueError("train_svinet needs a non-empty dataset")
    if not (cfg.use_real_data or cfg.use_synth_data):
        raise ValueError("enable real data, synthetic data or both")
    weights = weights or LossWeights()
    svinet = pipeline.svinet
    device = _device_of(svinet)
    pipeline.generator.requires_grad_(False)
    pipeline.encoder.requires_grad_(False)
    train_pipeline = WarpPipeline(
        pipeline.generator,
        pipeline.encoder,
        svinet,
        pipeline.camera,
        pipeline.warp_cfg,
        replace(pipeline.sampling, stratified=cfg.stratified_sampling),
    )

    np_rng = np.random.default_rng(cfg.seed)
    torch_rng = torch.Generator(device=device).manual_seed(cfg.seed)
    g_opt = torch.optim.Adam(svinet.parameters(), lr=cfg.lr_svinet)
    d_opt = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr_discriminator)
    criterion = SVINetCriterion(
        weights, extractors, pipeline.encoder, discriminator, use_consistency_loss=cfg.use_consistency_loss
    )
    modules = {"svinet": svinet, "discriminator": discriminator}
    optimizers = {"svinet": g_opt, "discriminator": d_opt}
    flags = dict(rng=torch_rng, use_modulation=cfg.use_modulation, use_symmetry=cfg.use_symmetry)

    start, history = 0, []
    if resume is not None:
        start, history = _restore_state(Path(resume), modules, optimizers, np_rng, torch_rng)

    camera = pipeline.camera
    B = cfg.svinet_batch
    bar = tqdm(range(start, cfg.svinet_iterations), desc="svinet", initial=start, total=cfg.svinet_iterations)
    for it in bar:
        groups = []
        if cfg.use_real_data:
            idx = np_rng.integers(0, len(dataset), size=B)
            images = torch.stack([dataset[i].image for i in idx]).to(device)
            poses = [dataset[i].pose for i in idx]
            novel = [sample_novel_pose(np_rng, cfg, camera) for _ in range(B)]
            groups.append(svinet_step_real(train_pipeline, images, poses, novel, **flags).batch)
        if cfg.use_synth_data:
            w_synth = sample_latents(np_rng, B, pipeline.generator)
            c_s = [sample_novel_pose(np_rng, cfg, camera) for _ in range(B)]
            c_t = [sample_novel_pose(np_rng, cfg, camera) for _ in range(B)]
            groups.append(svinet_step_synth(train_pipeline, w_synth, c_s, c_t, **flags).batch)
        batch = merge_batches(*groups)

        discriminator.requires_grad_(False)
        total, parts = criterion(batch)
        if not torch.isfinite(total):
            raise RuntimeError(f"inpainting loss became non-finite at iteration {it}")
        g_opt.zero_grad(set_to_none=True)
        total.backward()
        g_opt.step()

        discriminator.requires_grad_(True)
        real = torch.cat([x for x in (batch.real, batch.synth_target) if x is not None])
        d_loss = discriminator_step(discriminator, d_opt, real, batch.fakes(), weights)

        history.append({"iteration": it, **parts, "d_loss": d_loss})
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            recent = np.mean([h["total"] for h in history[-cfg.log_every :]])
            logger.info("svinet it=%d total=%.5f d=%.5f", it + 1, recent, d_loss)
            bar.set_postfix(total=f"{recent:.4f}")
        if checkpoint_dir is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            _save_state(
                Path(checkpoint_dir) / f"svinet_{it + 1:06d}.wbck",
                modules, optimizers, np_rng, torch_rng, it + 1, history, config_snapshot,
            )
    return SVINetRun(svinet, discriminator, pd.DataFrame(history, columns=HISTORY_COLUMNS))


__all__ = [
    "TrainConfig",
    "Discriminator",
    "Lookahead",
    "make_optimizer",
    "sample_novel_pose",
    "sample_latents",
    "synthetic_dataset",
    "CHECKPOINT_FILES",
    "load_models",
    "save_models",
    "EncoderRun",
    "train_encoder",
    "SVINetCriterion",
    "StepResult",
    "svinet_step_real",
    "svinet_step_synth",
    "merge_batches",
    "discriminator_step",
    "SVINetRun",
    "HISTORY_COLUMNS",
    "train_svinet",
]
