"""Plot helpers for WarpBoard training curves, view grids and depth maps."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import pandas as pd
from plotly.subplots import make_subplots
import plotly.graph_objects as go
from torch import Tensor

from .data import to_uint8

THEME_COLORWAY = [
    "#22D3EE",
    "#F472B6",
    "#A3E635",
    "#FBBF24",
    "#818CF8",
    "#FB7185",
]


def apply_plotly_theme(fig: go.Figure) -> go.Figure:
    """Apply the WarpBoard Plotly styling to a figure."""

    fig.update_layout(
        template="plotly_dark",
        paper_bgcolor="rgba(0,0,0,0)",
        plot_bgcolor="#0D1117",
        font=dict(color="#E6EDF3"),
        colorway=THEME_COLORWAY,
        margin=dict(l=40, r=20, t=40, b=40),
    )
    fig.update_xaxes(gridcolor="#30363D", zeroline=False)
    fig.update_yaxes(gridcolor="#30363D", zeroline=False)
    return fig


def loss_curves(history: pd.DataFrame, columns: Sequence[str] | None = None, smooth: int = 1) -> go.Figure:
    """Line per loss column against ``iteration``; ``smooth`` is a rolling-mean window."""
    if "iteration" not in history.columns:
        raise ValueError("history needs an 'iteration' column")
    if smooth < 1:
        raise ValueError(f"smooth must be >= 1, got {smooth}")
    columns = list(columns) if columns is not None else [c for c in history.columns if c != "iteration"]
    missing = [c for c in columns if c not in history.columns]
    if missing:
        raise ValueError(f"history has no column(s) {missing}")

    fig = go.Figure()
    for col in columns:
        series = pd.to_numeric(history[col], errors="coerce").rolling(smooth, min_periods=1).mean()
        fig.add_trace(go.Scatter(x=history["iteration"], y=series, mode="lines", name=col))
    fig.update_layout(xaxis_title="iteration", yaxis_title="loss")
    return apply_plotly_theme(fig)


def image_figure(image: Tensor, title: str | None = None) -> go.Figure:
    fig = go.Figure(go.Image(z=to_uint8(image)))
    fig.update_layout(title=title)
    fig.update_xaxes(visible=False)
    fig.update_yaxes(visible=False)
    return apply_plotly_theme(fig)


def view_grid(rows: Sequence[Sequence[Tensor]], row_titles: Sequence[str] | None = None) -> go.Figure:
    """Subplot grid of ``[3, H, W]`` images; one figure row per input row."""
    if not rows or not any(rows):
        raise ValueError("view_grid needs at least one image")
    n_cols = max(len(r) for r in rows)
    fig = make_subplots(rows=len(rows), cols=n_cols, row_titles=list(row_titles) if row_titles else None)
    for r, row in enumerate(rows, start=1):
        for c, img in enumerate(row, start=1):
            fig.add_trace(go.Image(z=to_uint8(img)), row=r, col=c)
    fig.update_xaxes(visible=False)
    fig.update_yaxes(visible=False)
    fig.update_layout(height=180 * len(rows))
    return apply_plotly_theme(fig)


def depth_figure(depth: Tensor, title: str | None = None) -> go.Figure:
    """Heatmap of a ``[1, H, W]`` or ``[H, W]`` depth map (nearer is brighter)."""
    arr = depth.detach().cpu().double().numpy()
    arr = arr.reshape(arr.shape[-2:])
    fig = go.Figure(go.Heatmap(z=np.flipud(arr), colorscale="Viridis", reversescale=True))
    fig.update_layout(title=title)
    fig.update_xaxes(visible=False)
    fig.update_yaxes(visible=False, scaleanchor="x")
    return apply_plotly_theme(fig)


def metrics_bars(frame: pd.DataFrame, metric: str) -> go.Figure:
    if metric not in frame.columns:
        raise ValueError(f"report has no column {metric!r}")
    values = pd.to_numeric(frame[metric], errors="coerce").replace([np.inf, -np.inf], np.nan)
    labels = frame["source"] + " → " + frame["target"]
    fig = go.Figure(go.Bar(x=labels, y=values, name=metric))
    fig.update_layout(yaxis_title=metric)
    return apply_plotly_theme(fig)


__all__ = [
    "THEME_COLORWAY",
    "apply_plotly_theme",
    "loss_curves",
    "image_figure",
    "view_grid",
    "depth_figure",
    "metrics_bars",
]
