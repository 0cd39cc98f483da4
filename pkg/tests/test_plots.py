from __future__ import annotations

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from diffaccel.artifacts import write_curve, write_grid, write_json, write_spectrum
from diffaccel.errors import ArtifactParseError
from diffaccel.landscape import InterpolationCurve, SpectrumEstimate
from diffaccel.metrics import MetricsLog, MetricsRow
from diffaccel.plots import emit_plots
from diffaccel.plots.figures import metrics_figure, speedup_figure


def write_metrics(path, offset=0.0):
    log = MetricsLog(path)
    for it in (10, 20, 30):
        log.append(MetricsRow(it, 1.0 / it + offset, 0.5 / it, 0.4 / it, 0.8, 1e-4, 0.5, 0.1))
    return path


def is_svg(path):
    root = ET.parse(path).getroot()
    return root.tag.endswith("svg")


def speedup_report():
    return {
        "kind": "speedup",
        "threshold": 0.05,
        "ratio": 0.5,
        "low_confidence": True,
        "run_names": ["baseline", "optimized"],
        "curves": {
            "baseline": {"iteration": [10.0, 20.0], "sw_ema": [0.2, 0.05]},
            "optimized": {"iteration": [10.0, 20.0], "sw_ema": [0.05, 0.02]},
        },
    }


def test_every_artifact_kind_renders(tmp_path):
    inputs = [
        write_metrics(tmp_path / "run_a" / "metrics.jsonl"),
        write_json(tmp_path / "speedup.json", speedup_report()),
        write_curve(tmp_path / "curve_1d.csv", InterpolationCurve(np.linspace(0, 1, 5), np.arange(5.0))),
        write_grid(tmp_path / "surface_2d.csv", np.linspace(-1, 1, 4), np.arange(16.0).reshape(4, 4)),
        write_spectrum(
            tmp_path / "spectrum.json",
            SpectrumEstimate.from_quadrature(np.array([4.0, 1.0]), np.array([0.5, 0.5]), 2, 0),
        ),
    ]
    written = emit_plots(inputs, tmp_path / "plots")
    assert [p.name for p in written] == [
        "run_a_metrics.svg", "speedup.svg", "curve_1d.svg", "surface_2d.svg", "spectrum.svg",
    ]
    assert all(is_svg(p) for p in written)


def test_two_metrics_logs_get_an_overlay(tmp_path):
    a = write_metrics(tmp_path / "a" / "metrics.jsonl")
    b = write_metrics(tmp_path / "b" / "metrics.jsonl", offset=0.1)
    written = emit_plots([a, b], tmp_path / "plots")
    assert [p.name for p in written] == ["a_metrics.svg", "b_metrics.svg", "metrics_overlay.svg"]


def test_empty_metrics_log_still_renders(tmp_path):
    path = tmp_path / "empty" / "metrics.jsonl"
    MetricsLog(path)
    (written,) = emit_plots([path], tmp_path / "plots")
    assert is_svg(written)


def test_output_is_byte_identical(tmp_path):
    path = write_metrics(tmp_path / "run" / "metrics.jsonl")
    (first,) = emit_plots([path], tmp_path / "one")
    (second,) = emit_plots([path], tmp_path / "two")
    assert first.read_bytes() == second.read_bytes()


def test_legend_names_runs():
    fig = speedup_figure(speedup_report())
    labels = [t.get_text() for t in fig.axes[0].get_legend().get_texts()]
    assert labels == ["baseline", "optimized"]
    assert "low confidence" in fig.axes[0].get_title()

    fig = metrics_figure({"a": [MetricsRow(1, 0.1, None, None, 0.8, 1e-4, 0.0, 0.0)]})
    assert [t.get_text() for t in fig.axes[0].get_legend().get_texts()] == ["a"]


def test_bad_inputs(tmp_path):
    unknown = write_json(tmp_path / "other.json", {"kind": "mystery"})
    with pytest.raises(ArtifactParseError):
        emit_plots([unknown], tmp_path / "plots")
    broken = tmp_path / "run" / "metrics.jsonl"
    broken.parent.mkdir()
    broken.write_text(json.dumps({"iteration": 1}) + "\n")
    with pytest.raises(ArtifactParseError) as info:
        emit_plots([broken], tmp_path / "plots")
    assert info.value.line == 1
