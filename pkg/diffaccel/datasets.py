"""Seeded 2D toy datasets, normalized into [-1, 1]^2."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Any, Self

import numpy as np
from sklearn.datasets import make_moons

from diffaccel.errors import InvalidConfigurationError

RING_MODES = 8
RING_RADIUS = 0.8
RING_STD = 0.05 * RING_RADIUS
MOONS_NOISE = 0.05
CHECKER_CELLS = 4


class DatasetKind(StrEnum):
    RING8 = "ring8"
    TWO_MOONS = "two_moons"
    CHECKERBOARD = "checkerboard"


@dataclass(frozen=True, slots=True)
class DatasetSpec:
    kind: DatasetKind = DatasetKind.RING8
    n_train: int = 8000
    n_eval: int = 2048
    seed: int = 0

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", DatasetKind(self.kind))
        except ValueError as exc:
            raise InvalidConfigurationError(f"unknown dataset kind {self.kind!r}") from exc
        if self.n_train < 1 or self.n_eval < 1:
            raise InvalidConfigurationError(f"dataset sizes must be >= 1, got {self.n_train}/{self.n_eval}")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": str(self.kind), "n_train": self.n_train, "n_eval": self.n_eval, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Self:
        return cls(**data)


def _ring8(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    modes = rng.integers(0, RING_MODES, size=n)
    angles = 2.0 * np.pi * modes / RING_MODES
    centers = RING_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centers + RING_STD * rng.standard_normal((n, 2)), modes


def _two_moons(n: int, rng: np.random.Generator) -> np.ndarray:
    points, _ = make_moons(n_samples=n, noise=MOONS_NOISE, random_state=int(rng.integers(2**31 - 1)))
    # raw moons span roughly x in [-1, 2], y in [-0.5, 1]
    center = np.array([0.5, 0.25])
    scale = np.array([1.6, 1.6])
    return (points - center) / scale


def _checkerboard(n: int, rng: np.random.Generator) -> np.ndarray:
    cells = [(i, j) for i in range(CHECKER_CELLS) for j in range(CHECKER_CELLS) if (i + j) % 2 == 0]
    picks = rng.integers(0, len(cells), size=n)
    corners = np.array(cells, dtype=np.float64)[picks]
    width = 2.0 / CHECKER_CELLS
    return -1.0 + width * (corners + rng.random((n, 2)))


def _draw(kind: DatasetKind, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind is DatasetKind.RING8:
        points, _ = _ring8(n, rng)
    elif kind is DatasetKind.TWO_MOONS:
        points = _two_moons(n, rng)
    else:
        points = _checkerboard(n, rng)
    return np.clip(points, -1.0, 1.0)


def generate(spec: DatasetSpec) -> tuple[np.ndarray, np.ndarray]:
    """(train, eval) point sets; the two come from separate seed sub-streams."""
    train_seq, eval_seq = np.random.SeedSequence(spec.seed).spawn(2)
    train = _draw(spec.kind, spec.n_train, np.random.default_rng(train_seq))
    held_out = _draw(spec.kind, spec.n_eval, np.random.default_rng(eval_seq))
    return train, held_out


def ring8_modes(spec: DatasetSpec) -> np.ndarray:
    """Mode index of every training point of a ring8 spec."""
    if spec.kind is not DatasetKind.RING8:
        raise InvalidConfigurationError("mode labels exist only for ring8")
    train_seq, _ = np.random.SeedSequence(spec.seed).spawn(2)
    _, modes = _ring8(spec.n_train, np.random.default_rng(train_seq))
    return modes


def export_csv(points: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{i}" for i in range(points.shape[1])])
        writer.writerows(points.tolist())
