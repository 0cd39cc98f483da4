from __future__ import annotations

import numpy as np
import pytest

from diffaccel.artifacts import (
    artifact_kind,
    read_curve,
    read_grid,
    read_json,
    read_spectrum,
    write_curve,
    write_grid,
    write_json,
    write_spectrum,
)
from diffaccel.core.diffusion import TimestepFilter
from diffaccel.errors import ArtifactParseError
from diffaccel.landscape import InterpolationCurve, SpectrumEstimate


def test_curve_file_keeps_values_and_header(tmp_path):
    curve = InterpolationCurve(np.linspace(0, 1, 5), np.array([0.1, 1 / 3, 0.2, 1e-17, 7.0]), TimestepFilter(0, 49))
    path = write_curve(tmp_path / "c.csv", curve, {"label": "run"})
    header, loaded = read_curve(path)
    np.testing.assert_array_equal(loaded.alphas, curve.alphas)
    np.testing.assert_array_equal(loaded.losses, curve.losses)
    assert loaded.timestep_filter == TimestepFilter(0, 49)
    assert header["label"] == "run"
    assert header["roughness"] == curve.roughness()
    assert artifact_kind(path) == "curve"


def test_grid_file_keeps_axis_order(tmp_path):
    grid = np.array([-1.0, 0.0, 1.0])
    losses = np.arange(9.0).reshape(3, 3)
    path = write_grid(tmp_path / "g.csv", grid, losses, {"normalization": "layerwise"})
    lines = path.read_text().splitlines()
    assert lines[1] == "u,v,loss"
    assert lines[3] == "-1.0,0.0,1.0"
    header, loaded_grid, loaded = read_grid(path)
    np.testing.assert_array_equal(loaded_grid, grid)
    np.testing.assert_array_equal(loaded, losses)
    assert header["normalization"] == "layerwise"
    assert artifact_kind(path) == "grid"


def test_spectrum_file(tmp_path):
    spectrum = SpectrumEstimate.from_quadrature(np.array([3.0, 1.0]), np.array([0.25, 0.75]), 2, 7)
    path = write_spectrum(tmp_path / "s.json", spectrum, {"checkpoint": "final.json"})
    loaded = read_spectrum(path)
    np.testing.assert_array_equal(loaded.ritz_values, spectrum.ritz_values)
    assert loaded.lambda1 == 3.0
    assert read_json(path)["checkpoint"] == "final.json"
    assert artifact_kind(path) == "spectrum"


def test_metrics_kind_by_suffix(tmp_path):
    assert artifact_kind(tmp_path / "metrics.jsonl") == "metrics"


@pytest.mark.parametrize(
    ("text", "line", "field"),
    [
        ("alpha,loss\n0,1\n", 1, None),
        ('# {"kind": "curve"}\nalpha,value\n', 2, None),
        ('# {"kind": "curve"}\nalpha,loss\n0.0,1.0\n0.5\n', 4, None),
        ('# {"kind": "curve"}\nalpha,loss\n0.0,abc\n', 3, "loss"),
        ("# {oops\nalpha,loss\n", 1, None),
    ],
)
def test_malformed_curves(tmp_path, text, line, field):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ArtifactParseError) as info:
        read_curve(path)
    assert info.value.line == line
    assert info.value.field == field
    assert str(path) in str(info.value)


def test_non_square_grid(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text('# {"kind": "grid"}\nu,v,loss\n0,0,1\n0,1,2\n')
    with pytest.raises(ArtifactParseError):
        read_grid(path)


def test_json_reports(tmp_path):
    path = write_json(tmp_path / "r.json", {"kind": "speedup", "b": 1, "a": 2})
    assert path.read_text().index('"a"') < path.read_text().index('"b"')
    (tmp_path / "list.json").write_text("[1]")
    with pytest.raises(ArtifactParseError):
        read_json(tmp_path / "list.json")
    (tmp_path / "nokind.json").write_text("{}")
    with pytest.raises(ArtifactParseError):
        artifact_kind(tmp_path / "nokind.json")
    with pytest.raises(ArtifactParseError):
        read_spectrum(tmp_path / "nokind.json")
