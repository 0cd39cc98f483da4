"""
Figures for training metrics, speedup comparisons, interpolation curves, loss surfaces and spectra.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

from diffaccel.landscape import InterpolationCurve, SpectrumEstimate
from diffaccel.metrics import MetricsRow

# Fixed salt and no date keep SVG bytes a function of the inputs alone.
SVG_RC = {"svg.hashsalt": "diffaccel", "svg.fonttype": "path", "path.simplify": False}
FIGSIZE = (6.0, 4.0)


def save_svg(fig: Figure, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "diffaccel"})
    return path


def _legend(ax: Any) -> None:
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="best")


def metrics_figure(runs: Mapping[str, Sequence[MetricsRow]]) -> Figure:
    """Training loss and sample-quality distance against iteration, one colour per run."""
    fig = Figure(figsize=(FIGSIZE[0], 2 * FIGSIZE[1]))
    loss_ax, sw_ax = fig.subplots(2, 1, sharex=True)
    for name, rows in runs.items():
        if not rows:
            continue
        it = [r.iteration for r in rows]
        loss_ax.plot(it, [r.train_loss for r in rows], label=name)
        sw_ax.plot(it, [np.nan if r.sw_ema is None else r.sw_ema for r in rows], label=f"{name} (EMA)")
        sw_ax.plot(it, [np.nan if r.sw_raw is None else r.sw_raw for r in rows], linestyle="--", label=f"{name} (raw)")
    loss_ax.set_ylabel("training loss")
    sw_ax.set_ylabel("sliced Wasserstein")
    sw_ax.set_xlabel("iteration")
    _legend(loss_ax)
    _legend(sw_ax)
    fig.tight_layout()
    return fig


def speedup_figure(report: Mapping[str, Any]) -> Figure:
    """Median EMA distance per run with the threshold line."""
    fig = Figure(figsize=FIGSIZE)
    ax = fig.subplots()
    for name in report.get("run_names", []):
        curve = report.get("curves", {}).get(name)
        if curve:
            ax.plot(curve["iteration"], curve["sw_ema"], label=name)
    threshold = report.get("threshold")
    if threshold is not None:
        ax.axhline(threshold, color="grey", linestyle=":", linewidth=1)
    ratio = report.get("ratio")
    title = "speedup" if ratio is None else f"iterations ratio {ratio:.2f}"
    if report.get("low_confidence"):
        title += " (low confidence)"
    ax.set_title(title)
    ax.set_xlabel("iteration")
    ax.set_ylabel("sliced Wasserstein (EMA, median)")
    _legend(ax)
    fig.tight_layout()
    return fig


def curve_figure(curves: Mapping[str, InterpolationCurve]) -> Figure:
    fig = Figure(figsize=FIGSIZE)
    ax = fig.subplots()
    for name, curve in curves.items():
        ax.plot(curve.alphas, curve.losses, marker=".", label=name)
    ax.set_xlabel("alpha")
    ax.set_ylabel("loss")
    _legend(ax)
    fig.tight_layout()
    return fig


def grid_figure(grid: np.ndarray, losses: np.ndarray, title: str = "") -> Figure:
    fig = Figure(figsize=(FIGSIZE[0], FIGSIZE[0]))
    ax = fig.subplots()
    # losses[i, j] has u = grid[i] on the horizontal axis
    cs = ax.contourf(grid, grid, losses.T, levels=20, cmap="viridis")
    fig.colorbar(cs, ax=ax)
    ax.set_xlabel("u")
    ax.set_ylabel("v")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig


def spectrum_figure(spectra: Mapping[str, SpectrumEstimate], points: int = 400) -> Figure:
    """Smoothed spectral density of every estimate on a shared eigenvalue axis."""
    fig = Figure(figsize=FIGSIZE)
    ax = fig.subplots()
    if spectra:
        lo = min(float(s.ritz_values.min()) for s in spectra.values())
        hi = max(float(s.ritz_values.max()) for s in spectra.values())
        pad = max(hi - lo, 1.0) * 0.05
        axis = np.linspace(lo - pad, hi + pad, points)
        for name, spectrum in spectra.items():
            ax.plot(axis, spectrum.density(axis), label=f"{name} (lambda1={spectrum.lambda1:.3g})")
    ax.set_xlabel("eigenvalue")
    ax.set_ylabel("density")
    _legend(ax)
    fig.tight_layout()
    return fig
