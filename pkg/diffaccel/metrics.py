"""Training metrics rows: JSONL log plus a CSV mirror."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Self

from diffaccel.errors import ArtifactParseError, ContractViolation


@dataclass(frozen=True, slots=True)
class MetricsRow:
    iteration: int
    train_loss: float
    sw_raw: float | None
    sw_ema: float | None
    beta1: float
    lr: float
    gamma: float
    wall_clock: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def deterministic(self) -> tuple[Any, ...]:
        """Every field except wall-clock time."""
        return tuple(getattr(self, f.name) for f in fields(self) if f.name != "wall_clock")

    @classmethod
    def from_dict(cls, data: dict[str, Any], path: Path | None = None, line: int | None = None) -> Self:
        values: dict[str, Any] = {}
        for f in fields(cls):
            if f.name not in data:
                raise ArtifactParseError("missing metrics field", path, line, f.name)
            raw = data[f.name]
            if raw is None and f.name in ("sw_raw", "sw_ema"):
                values[f.name] = None
                continue
            try:
                values[f.name] = int(raw) if f.name == "iteration" else float(raw)
            except (TypeError, ValueError) as exc:
                raise ArtifactParseError(f"not a number: {raw!r}", path, line, f.name) from exc
        return cls(**values)


FIELDNAMES = [f.name for f in fields(MetricsRow)]


class MetricsLog:
    """Append-only metrics log, optionally mirrored to ``<stem>.jsonl`` and ``<stem>.csv``."""

    def __init__(self, path: Path | None = None, rows: list[MetricsRow] | None = None) -> None:
        self.rows: list[MetricsRow] = list(rows or [])
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            if not self.rows:
                path.write_text("", encoding="utf-8")
                self._csv_path.write_text(",".join(FIELDNAMES) + "\n", encoding="utf-8")

    @property
    def _csv_path(self) -> Path:
        assert self.path is not None
        return self.path.with_suffix(".csv")

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ContractViolation(
                f"metrics rows must increase in iteration ({row.iteration} after {self.rows[-1].iteration})"
            )
        self.rows.append(row)
        if self.path is None:
            return
        with self.path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(row.to_dict()) + "\n")
        with self._csv_path.open("a", newline="", encoding="utf-8") as f:
            csv.writer(f).writerow(["" if v is None else v for v in row.to_dict().values()])

    def truncate_after(self, iteration: int) -> None:
        """Drop rows past ``iteration`` and rewrite the files (used on resume)."""
        self.rows = [r for r in self.rows if r.iteration <= iteration]
        if self.path is None:
            return
        self.path.write_text("".join(json.dumps(r.to_dict()) + "\n" for r in self.rows), encoding="utf-8")
        with self._csv_path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(FIELDNAMES)
            for r in self.rows:
                writer.writerow(["" if v is None else v for v in r.to_dict().values()])


def read_metrics(path: Path) -> list[MetricsRow]:
    """Parse a JSONL metrics file; errors name the line and field."""
    rows: list[MetricsRow] = []
    with path.open(encoding="utf-8") as f:
        for lineno, text in enumerate(f, start=1):
            if not text.strip():
                continue
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ArtifactParseError(exc.msg, path, lineno) from exc
            if not isinstance(data, dict):
                raise ArtifactParseError("row is not an object", path, lineno)
            row = MetricsRow.from_dict(data, path, lineno)
            if rows and row.iteration <= rows[-1].iteration:
                raise ArtifactParseError("iterations are not increasing", path, lineno, "iteration")
            rows.append(row)
    return rows
