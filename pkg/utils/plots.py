"""
Self-contained HTML charts for training curves and rank diagnostics.
"""

from pathlib import Path
from typing import Optional

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from utils.data_processor import DataProcessor, PathLike


def loss_curve_figure(loss_log: pd.DataFrame) -> go.Figure:
    """Mean loss and learning rate per epoch from a loss-log table (epoch, lr, loss)."""
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=loss_log["epoch"], y=loss_log["loss"], mode="lines+markers", name="loss"))
    fig.add_trace(go.Scatter(x=loss_log["epoch"], y=loss_log["lr"], mode="lines", name="lr", yaxis="y2"))
    fig.update_layout(
        title="Training loss",
        xaxis_title="epoch",
        yaxis=dict(title="mean loss"),
        yaxis2=dict(title="learning rate", overlaying="y", side="right"),
        template="plotly_white",
    )
    return fig


def depth_profile_figure(summary: pd.DataFrame) -> go.Figure:
    """Mean cosine similarity against depth, one line per layer kind."""
    fig = px.line(
        summary,
        x="depth",
        y="mean_cosine",
        color="layer_kind",
        markers=True,
        title="Feature similarity with depth",
        labels={"mean_cosine": "mean cosine to temporal mean", "layer_kind": "layer"},
    )
    fig.update_layout(template="plotly_white")
    return fig


def write_figure(fig: go.Figure, path: PathLike, processor: Optional[DataProcessor] = None) -> Path:
    """Write ``fig`` as standalone HTML (plotly.js inlined)."""
    processor = processor or DataProcessor()
    return processor.write_text(path, fig.to_html(include_plotlyjs=True, full_html=True))
