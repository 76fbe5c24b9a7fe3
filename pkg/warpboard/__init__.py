__all__ = [
    "geometry",
    "generator",
    "encoder",
    "warping",
    "svinet",
    "losses",
    "pipeline",
    "training",
    "editing",
    "data",
    "checkpoint",
    "config",
    "metrics",
    "selfcheck",
    "plots",
    "cli",
]
__version__ = "0.1.0"
