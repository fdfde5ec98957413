"""Tests for the HTML charts."""

import pandas as pd
import pytest

from utils.plots import depth_profile_figure, loss_curve_figure, write_figure


@pytest.mark.unit
def test_loss_curve_has_loss_and_lr_traces():
    fig = loss_curve_figure(pd.DataFrame({"epoch": [1, 2, 3], "lr": [1e-3, 1e-3, 5e-4], "loss": [2.0, 1.5, 1.2]}))
    assert [trace.name for trace in fig.data] == ["loss", "lr"]
    assert list(fig.data[0].y) == [2.0, 1.5, 1.2]


@pytest.mark.unit
def test_depth_profile_has_one_line_per_layer_kind():
    summary = pd.DataFrame({
        "depth": [0, 1, 0, 1],
        "layer_kind": ["self_attention", "self_attention", "sgp", "sgp"],
        "mean_cosine": [0.9, 0.95, 0.9, 0.7],
    })
    fig = depth_profile_figure(summary)
    assert sorted(trace.name for trace in fig.data) == ["self_attention", "sgp"]


@pytest.mark.integration
def test_write_figure_is_standalone_html(processor, tmp_path):
    fig = loss_curve_figure(pd.DataFrame({"epoch": [1], "lr": [1e-3], "loss": [1.0]}))
    path = write_figure(fig, "charts/loss.html", processor)
    assert path == tmp_path / "charts" / "loss.html"
    text = path.read_text()
    assert "<html>" in text
    assert "plotly" in text
