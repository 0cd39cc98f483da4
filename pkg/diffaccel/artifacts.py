"""Reading and writing result files.

Curves and grids are CSV files whose first line is ``#`` followed by a JSON
header; reports and spectra are JSON documents carrying a ``kind`` key.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any

import numpy as np

from diffaccel.core.diffusion import TimestepFilter
from diffaccel.errors import ArtifactParseError
from diffaccel.landscape import InterpolationCurve, SpectrumEstimate

CURVE_COLUMNS = ("alpha", "loss")
GRID_COLUMNS = ("u", "v", "loss")


def write_json(path: Path, payload: dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path) -> dict[str, Any]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactParseError(exc.msg, path, exc.lineno) from exc
    if not isinstance(data, dict):
        raise ArtifactParseError("top level is not an object", path, 1)
    return data


def _write_table(path: Path, header: dict[str, Any], columns: tuple[str, ...], rows: list[tuple[float, ...]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    # repr keeps every float bit
    writer.writerows([[repr(float(v)) for v in row] for row in rows])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _read_table(path: Path, columns: tuple[str, ...]) -> tuple[dict[str, Any], np.ndarray]:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ArtifactParseError("missing '#' JSON header line", path, 1)
    try:
        header = json.loads(lines[0][1:])
    except json.JSONDecodeError as exc:
        raise ArtifactParseError(f"bad header: {exc.msg}", path, 1) from exc
    reader = csv.reader(lines[1:])
    names = next(reader, None)
    if names is None or tuple(names) != columns:
        raise ArtifactParseError(f"expected columns {','.join(columns)}", path, 2)
    values: list[list[float]] = []
    for lineno, row in enumerate(reader, start=3):
        if len(row) != len(columns):
            raise ArtifactParseError(f"expected {len(columns)} values, got {len(row)}", path, lineno)
        parsed = []
        for name, cell in zip(columns, row):
            try:
                parsed.append(float(cell))
            except ValueError as exc:
                raise ArtifactParseError(f"not a number: {cell!r}", path, lineno, name) from exc
        values.append(parsed)
    return header, np.array(values, dtype=np.float64).reshape(len(values), len(columns))


def write_curve(path: Path, curve: InterpolationCurve, header: dict[str, Any] | None = None) -> Path:
    meta = {"kind": "curve", **(header or {})}
    meta["timestep_filter"] = curve.timestep_filter.describe() if curve.timestep_filter else None
    meta["roughness"] = curve.roughness()
    return _write_table(path, meta, CURVE_COLUMNS, list(zip(curve.alphas, curve.losses)))


def read_curve(path: Path) -> tuple[dict[str, Any], InterpolationCurve]:
    header, table = _read_table(path, CURVE_COLUMNS)
    tf = header.get("timestep_filter")
    return header, InterpolationCurve(table[:, 0], table[:, 1], TimestepFilter.parse(tf) if tf else None)


def write_grid(path: Path, grid: np.ndarray, losses: np.ndarray, header: dict[str, Any] | None = None) -> Path:
    """Rows ``u, v, loss`` in the ``losses[i, j]`` order with ``u = grid[i]``, ``v = grid[j]``."""
    meta = {"kind": "grid", **(header or {})}
    rows = [(u, v, losses[i, j]) for i, u in enumerate(grid) for j, v in enumerate(grid)]
    return _write_table(path, meta, GRID_COLUMNS, rows)


def read_grid(path: Path) -> tuple[dict[str, Any], np.ndarray, np.ndarray]:
    header, table = _read_table(path, GRID_COLUMNS)
    k = int(round(np.sqrt(table.shape[0])))
    if k * k != table.shape[0] or k == 0:
        raise ArtifactParseError(f"{table.shape[0]} rows do not form a square grid", path)
    grid = table[::k, 0]
    return header, grid, table[:, 2].reshape(k, k)


def write_spectrum(path: Path, spectrum: SpectrumEstimate, header: dict[str, Any] | None = None) -> Path:
    return write_json(path, {"kind": "spectrum", **(header or {}), **spectrum.to_dict()})


def read_spectrum(path: Path) -> SpectrumEstimate:
    data = read_json(path)
    try:
        return SpectrumEstimate.from_dict(data)
    except KeyError as exc:
        raise ArtifactParseError("missing spectrum field", path, field=str(exc.args[0])) from exc
    except (TypeError, ValueError) as exc:
        raise ArtifactParseError(str(exc), path) from exc


def artifact_kind(path: Path) -> str:
    """``metrics``, ``curve``, ``grid`` or a JSON report's ``kind`` value."""
    if path.suffix == ".jsonl":
        return "metrics"
    if path.suffix == ".csv":
        with path.open(encoding="utf-8") as f:
            first = f.readline()
        if not first.startswith("#"):
            raise ArtifactParseError("CSV artifact has no '#' header", path, 1)
        try:
            return str(json.loads(first[1:]).get("kind", ""))
        except json.JSONDecodeError as exc:
            raise ArtifactParseError(f"bad header: {exc.msg}", path, 1) from exc
    kind = read_json(path).get("kind")
    if not isinstance(kind, str):
        raise ArtifactParseError("report has no kind", path, field="kind")
    return kind
