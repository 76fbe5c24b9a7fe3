"""Typed configuration loaded from TOML with ``section.key=value`` overrides.

Precedence: command-line overrides > config file > dataclass defaults.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
import logging
from pathlib import Path
from typing import Any, Iterable

import toml
import torch

from .editing import OptConfig
from .encoder import EncoderConfig, LatentEncoder
from .generator import GeneratorConfig, SamplingConfig, TriPlaneGenerator
from .losses import LossWeights
from .pipeline import CameraConfig, WarpPipeline
from .svinet import SVINet, SVINetConfig
from .training import Discriminator, TrainConfig
from .warping import WarpConfig

logger = logging.getLogger(__name__)

SECTIONS = {
    "camera": CameraConfig,
    "generator": GeneratorConfig,
    "sampling": SamplingConfig,
    "encoder": EncoderConfig,
    "warp": WarpConfig,
    "svinet": SVINetConfig,
    "losses": LossWeights,
    "train": TrainConfig,
    "editing": OptConfig,
}


@dataclass
class AppConfig:
    camera: CameraConfig = field(default_factory=CameraConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    warp: WarpConfig = field(default_factory=WarpConfig)
    svinet: SVINetConfig = field(default_factory=SVINetConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    editing: OptConfig = field(default_factory=OptConfig)

    def check(self) -> "AppConfig":
        """Cross-section consistency; returns self."""
        L, d, R = self.generator.n_levels, self.generator.latent_dim, self.camera.resolution
        for name, section in (("encoder", self.encoder), ("svinet", self.svinet)):
            if (section.n_levels, section.latent_dim) != (L, d):
                raise ValueError(
                    f"[{name}] latent shape {section.n_levels}x{section.latent_dim} "
                    f"differs from [generator] {L}x{d}"
                )
            if section.resolution != R:
                raise ValueError(f"[{name}] resolution {section.resolution} differs from [camera] {R}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    # --- model construction ---
    def build_generator(self, seed: int | None = None) -> TriPlaneGenerator:
        torch.manual_seed(self.train.seed if seed is None else seed)
        return TriPlaneGenerator(self.generator)

    def build_pipeline(
        self,
        generator: TriPlaneGenerator | None = None,
        encoder: LatentEncoder | None = None,
        svinet: SVINet | None = None,
    ) -> WarpPipeline:
        self.check()
        torch.manual_seed(self.train.seed)
        generator = generator or TriPlaneGenerator(self.generator)
        encoder = encoder or LatentEncoder(self.encoder)
        svinet = svinet or SVINet(self.svinet)
        return WarpPipeline(generator, encoder, svinet, self.camera, self.warp, self.sampling)

    def build_discriminator(self) -> Discriminator:
        return Discriminator(self.camera.resolution)


def parse_override(text: str) -> tuple[str, str, Any]:
    """``"section.key=value"`` -> ``(section, key, value)``; value parsed as a TOML literal."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ValueError(f"override must look like section.key=value, got {text!r}")
    target, raw = text.split("=", 1)
    section, key = target.strip().split(".", 1)
    try:
        value = toml.loads(f"v = {raw.strip()}")["v"]
    except toml.TomlDecodeError:
        value = raw.strip()
    return section, key, value


def _apply(cfg: AppConfig, section: str, values: dict[str, Any], origin: str) -> AppConfig:
    if section not in SECTIONS:
        logger.warning("%s: unknown section [%s] ignored", origin, section)
        return cfg
    current = getattr(cfg, section)
    known = {f.name for f in fields(current)}
    accepted = {}
    for key, value in values.items():
        if key not in known:
            logger.warning("%s: unknown key %s.%s ignored", origin, section, key)
            continue
        accepted[key] = value
    if not accepted:
        return cfg
    return replace(cfg, **{section: replace(current, **accepted)})


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> AppConfig:
    cfg = AppConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        payload = toml.load(path)
        for section, values in payload.items():
            if not isinstance(values, dict):
                logger.warning("%s: top-level key %r ignored", path, section)
                continue
            cfg = _apply(cfg, section, values, str(path))
    for text in overrides:
        section, key, value = parse_override(text)
        cfg = _apply(cfg, section, {key: value}, "--set")
    return cfg


def dump_config(cfg: AppConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {k: {kk: vv for kk, vv in v.items() if vv is not None} for k, v in cfg.to_dict().items()}
    path.write_text(toml.dumps(payload), encoding="utf-8")
    return path


__all__ = ["SECTIONS", "AppConfig", "parse_override", "load_config", "dump_config"]
