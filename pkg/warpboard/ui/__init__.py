"""UI helpers for WarpBoard."""

from .loaders import demo_image, load_app_config, load_pipeline
from .theme import apply_global_theme

__all__ = ["apply_global_theme", "demo_image", "load_app_config", "load_pipeline"]
