"""Small JSON-backed user settings."""

from .views import DEFAULT_VIEWS, load_views, resolve_views, save_views

__all__ = ["DEFAULT_VIEWS", "load_views", "resolve_views", "save_views"]
