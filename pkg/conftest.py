"""Shared tiny configurations so the suite runs on CPU."""
from __future__ import annotations

import pytest
import torch

from warpboard.config import AppConfig
from warpboard.editing import OptConfig
from warpboard.encoder import EncoderConfig
from warpboard.generator import GeneratorConfig, SamplingConfig
from warpboard.pipeline import CameraConfig
from warpboard.svinet import SVINetConfig
from warpboard.training import TrainConfig
from warpboard.warping import WarpConfig

TINY_RES = 16
TINY_LEVELS = 4
TINY_DIM = 8


def tiny_config() -> AppConfig:
    return AppConfig(
        camera=CameraConfig(resolution=TINY_RES),
        generator=GeneratorConfig(
            n_levels=TINY_LEVELS,
            latent_dim=TINY_DIM,
            plane_channels=4,
            plane_resolution=8,
            base_resolution=4,
            decoder_hidden=8,
        ),
        sampling=SamplingConfig(n_samples=8),
        encoder=EncoderConfig(resolution=TINY_RES, base_channels=4, n_levels=TINY_LEVELS, latent_dim=TINY_DIM, pooled_size=2),
        warp=WarpConfig(),
        svinet=SVINetConfig(
            resolution=TINY_RES,
            base_channels=4,
            n_down=2,
            n_up=2,
            n_blocks=1,
            n_levels=TINY_LEVELS,
            latent_dim=TINY_DIM,
        ),
        train=TrainConfig(
            encoder_iterations=4,
            svinet_iterations=2,
            encoder_batch=2,
            svinet_batch=1,
            stratified_sampling=False,
            checkpoint_every=2,
            log_every=1,
        ),
        editing=OptConfig(invert_steps=20, tune_steps=5, n_views=1),
    )


@pytest.fixture
def tiny_cfg() -> AppConfig:
    return tiny_config()


@pytest.fixture
def tiny_pipeline(tiny_cfg):
    pipeline = tiny_cfg.build_pipeline()
    for module in (pipeline.generator, pipeline.encoder, pipeline.svinet):
        module.eval()
    return pipeline


@pytest.fixture
def tiny_image(tiny_pipeline):
    g = torch.Generator().manual_seed(7)
    w = tiny_pipeline.generator.sample_latents(1, generator=g)
    with torch.no_grad():
        image, _ = tiny_pipeline.render(w, tiny_pipeline.camera.pose(0.1, 0.0))
    return image.clamp(-1, 1)
