"""Render result files as SVG."""

from __future__ import annotations

import logging
from collections.abc import Iterable
from pathlib import Path

from diffaccel.artifacts import artifact_kind, read_curve, read_grid, read_json, read_spectrum
from diffaccel.errors import ArtifactParseError
from diffaccel.metrics import read_metrics
from diffaccel.plots.figures import (
    curve_figure,
    grid_figure,
    metrics_figure,
    save_svg,
    speedup_figure,
    spectrum_figure,
)

logger = logging.getLogger(__name__)

__all__ = ["emit_plots"]


def _run_name(path: Path) -> str:
    """Metrics logs are named after their run directory."""
    if path.suffix == ".jsonl" and path.parent.name:
        return path.parent.name
    return path.stem


def emit_plots(paths: Iterable[Path], out_dir: Path) -> list[Path]:
    """One SVG per input file, named after the input; all metrics logs also share one overlay."""
    written: list[Path] = []
    metrics_runs = {}
    for path in paths:
        kind = artifact_kind(path)
        target = out_dir / f"{path.stem}.svg"
        if kind == "metrics":
            rows = read_metrics(path)
            metrics_runs[_run_name(path)] = rows
            target = out_dir / f"{_run_name(path)}_{path.stem}.svg"
            fig = metrics_figure({_run_name(path): rows})
        elif kind == "speedup":
            fig = speedup_figure(read_json(path))
        elif kind == "curve":
            header, curve = read_curve(path)
            fig = curve_figure({header.get("label", path.stem): curve})
        elif kind == "grid":
            header, grid, losses = read_grid(path)
            fig = grid_figure(grid, losses, title=str(header.get("normalization", "")))
        elif kind == "spectrum":
            fig = spectrum_figure({path.stem: read_spectrum(path)})
        else:
            raise ArtifactParseError(f"no plot for artifact kind {kind!r}", path, field="kind")
        written.append(save_svg(fig, target))
        logger.info("Wrote plot", extra={"input": str(path), "output": str(target)})

    if len(metrics_runs) > 1:
        written.append(save_svg(metrics_figure(metrics_runs), out_dir / "metrics_overlay.svg"))
    return written
