"""Persistence helpers for named camera views (yaw/pitch offsets in radians)."""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Dict, Tuple

logger = logging.getLogger(__name__)

# Path to repo root so data/ works both in development and package install
BASE_DIR = Path(__file__).resolve().parent.parent.parent
VIEWS_PATH = BASE_DIR / "data" / "views.json"

View = Tuple[float, float]

DEFAULT_VIEWS: Dict[str, View] = {
    "front": (0.0, 0.0),
    "right": (0.45, 0.0),
    "left": (-0.45, 0.0),
    "top": (0.0, 0.25),
    "down": (0.0, -0.25),
}


def _valid(name: str, value) -> View | None:
    try:
        yaw, pitch = (float(v) for v in value)
    except (TypeError, ValueError):
        logger.warning("view %r is not a [yaw, pitch] pair, skipped", name)
        return None
    if not abs(pitch) < math.pi / 2:
        logger.warning("view %r has |pitch| >= pi/2, skipped", name)
        return None
    return yaw, pitch


def load_views(path: Path | None = None) -> Dict[str, View]:
    """Named views from disk in file order; the defaults when the file is absent or unreadable."""
    path = path or VIEWS_PATH
    if not path.exists():
        return dict(DEFAULT_VIEWS)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        logger.warning("could not read %s (%s); using default views", path, exc)
        return dict(DEFAULT_VIEWS)
    if not isinstance(data, dict):
        logger.warning("%s must hold an object of name -> [yaw, pitch]; using default views", path)
        return dict(DEFAULT_VIEWS)
    views = {}
    for name, value in data.items():
        view = _valid(str(name), value)
        if view is not None:
            views[str(name)] = view
    return views or dict(DEFAULT_VIEWS)


def save_views(views: Dict[str, View], path: Path | None = None) -> None:
    """Persist views to JSON, creating the folder if needed."""
    path = path or VIEWS_PATH
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {name: [float(yaw), float(pitch)] for name, (yaw, pitch) in views.items()}
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2)


def resolve_views(names, views: Dict[str, View] | None = None) -> Dict[str, View]:
    """Subset of ``views`` in the requested order; unknown names raise ``ValueError``."""
    views = views if views is not None else load_views()
    unknown = [n for n in names if n not in views]
    if unknown:
        raise ValueError(f"unknown view(s) {unknown}; known: {sorted(views)}")
    return {n: views[n] for n in names}
