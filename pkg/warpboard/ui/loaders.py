"""Cached model loading shared by the Streamlit pages."""
from __future__ import annotations

import logging
from pathlib import Path

import streamlit as st
import torch

from ..config import AppConfig, load_config
from ..pipeline import WarpPipeline
from ..training import CHECKPOINT_FILES, load_models

logger = logging.getLogger(__name__)


@st.cache_resource(show_spinner=False)
def load_app_config(config_path: str = "") -> AppConfig:
    return load_config(config_path or None).check()


@st.cache_resource(show_spinner=False)
def load_pipeline(checkpoint_dir: str = "", config_path: str = "") -> tuple[WarpPipeline, list[str]]:
    """Pipeline with whatever weights exist in ``checkpoint_dir``; also returns the names loaded."""
    cfg = load_app_config(config_path)
    pipeline = cfg.build_pipeline()
    loaded = []
    root = Path(checkpoint_dir) if checkpoint_dir else None
    for name, file_name in CHECKPOINT_FILES.items():
        if root is None or not (root / file_name).exists():
            continue
        load_models(root / file_name, {name: getattr(pipeline, name)})
        loaded.append(name)
    for module in (pipeline.generator, pipeline.encoder, pipeline.svinet):
        module.eval().requires_grad_(False)
    logger.info("dashboard pipeline ready (loaded: %s)", ", ".join(loaded) or "none")
    return pipeline, loaded


@torch.no_grad()
def demo_image(pipeline: WarpPipeline, seed: int, yaw: float, pitch: float) -> torch.Tensor:
    """A render of a random latent code, used when no image is uploaded."""
    g = torch.Generator().manual_seed(seed)
    w = pipeline.generator.sample_latents(1, generator=g)
    image, _ = pipeline.render(w, pipeline.camera.pose(yaw, pitch))
    return image.clamp(-1, 1)
