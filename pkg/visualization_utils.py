"""
Plotly figures for the K sweep and for qualitative centerline comparison
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import plotly.graph_objects as go
from plotly.subplots import make_subplots

from metrics import within_radius

logger = logging.getLogger(__name__)

# plotly tags every clip path and legend id with a random per-render uid
_PLOTLY_UID = re.compile(r'id="clip([0-9a-f]{6})')
STABLE_UID = "000000"


def stable_svg_ids(svg_text):
    """Replace the random plotly render uid in an SVG document with a constant"""
    match = _PLOTLY_UID.search(svg_text)
    if match is None:
        return svg_text
    return svg_text.replace(match.group(1), STABLE_UID)


class CenterlineVisualizer:
    """Sweep charts and 3D prediction-vs-ground-truth scatters"""

    def __init__(self, template="plotly_white"):
        self.template = template
        self.colors = {
            "f1": "#1f77b4",
            "betti0": "#d62728",
            "tp": "#2ca02c",
            "fp": "#d62728",
            "gt": "#7f7f7f",
        }

    def create_sweep_chart(self, sweep_df, title="Effect of the number of samples K"):
        """F1@R=1 (left axis) and mean Betti-0 (right axis) against K"""
        fig = make_subplots(specs=[[{"secondary_y": True}]])
        fig.add_trace(
            go.Scatter(
                x=sweep_df["K"], y=sweep_df["f1_r1"], mode="lines+markers", name="F1 @ R=1",
                line=dict(color=self.colors["f1"], width=2),
            ),
            secondary_y=False,
        )
        fig.add_trace(
            go.Scatter(
                x=sweep_df["K"], y=sweep_df["betti0"], mode="lines+markers", name="Betti-0",
                line=dict(color=self.colors["betti0"], width=2, dash="dash"),
            ),
            secondary_y=True,
        )
        fig.update_xaxes(title_text="K (samples)")
        fig.update_yaxes(title_text="mean F1 @ R=1", secondary_y=False)
        fig.update_yaxes(title_text="mean Betti-0", secondary_y=True)
        fig.update_layout(title=title, template=self.template, width=720, height=440)
        return fig

    def create_centerline_figure(self, pred, gt, radius=1.0, title="Predicted vs ground-truth centerline"):
        """Matched predictions, false positives and ground truth as 3D markers"""
        hit = within_radius(pred.points, gt.points, radius)
        layers = [
            ("ground truth", gt.points, self.colors["gt"], 2, 0.35),
            (f"matched (R={radius:g})", pred.points[hit], self.colors["tp"], 3, 0.9),
            ("false positive", pred.points[~hit], self.colors["fp"], 3, 0.9),
        ]
        fig = go.Figure()
        for name, pts, color, size, opacity in layers:
            fig.add_trace(go.Scatter3d(
                x=pts[:, 0], y=pts[:, 1], z=pts[:, 2], mode="markers", name=f"{name} ({len(pts)})",
                marker=dict(size=size, color=color, opacity=opacity),
            ))
        fig.update_layout(
            title=title, template=self.template,
            scene=dict(xaxis_title="x", yaxis_title="y", zaxis_title="z", aspectmode="data"),
        )
        return fig

    def save_figure(self, fig, path):
        """SVG through kaleido with stable element ids; HTML next to it when static export is unavailable"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix.lower() != ".html":
            try:
                fmt = path.suffix.lstrip(".").lower() or "svg"
                fig.write_image(str(path), format=fmt)
                if fmt == "svg":
                    path.write_text(stable_svg_ids(path.read_text(encoding="utf-8")), encoding="utf-8")
                return path
            except Exception as e:
                logger.warning(f"static image export unavailable ({e}); writing HTML instead")
                path = path.with_suffix(".html")
        fig.write_html(str(path), include_plotlyjs="cdn", full_html=True, div_id="centerline-figure")
        return path
