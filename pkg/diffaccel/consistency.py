"""Consistency of independently trained samplers under shared noise, and sample-quality distance.

The consistency C of N models over M shared noise inputs is the mean PSNR of
every model's output against the first model's output on the same input.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Self

import numpy as np
from scipy.stats import wasserstein_distance

from diffaccel.core.diffusion import Denoiser, NoiseSchedule, NoiseStream, generate
from diffaccel.errors import ContractViolation, InvalidConfigurationError
from diffaccel.utils import check_same_shape

DATA_PEAK = 2.0
PSNR_CAP_DB = 100.0
DEFAULT_PROJECTIONS = 128


def psnr(a: np.ndarray, b: np.ndarray, peak: float = DATA_PEAK) -> float:
    """``10 log10(peak^2 / MSE)``; identical inputs give the 100 dB cap."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b, "psnr")
    if not peak > 0:
        raise InvalidConfigurationError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak * peak / mse)


@dataclass(frozen=True, slots=True)
class SampleGrid:
    """Samples ``q[i, j]`` of model i on shared noise input j."""

    q: np.ndarray
    model_tags: tuple[str, ...]
    seed: int

    def __post_init__(self) -> None:
        if self.q.ndim != 3:
            raise ContractViolation(f"sample grid must be (N, M, d), got {self.q.shape}")
        n, m, _ = self.q.shape
        if n < 2:
            raise InvalidConfigurationError(f"consistency needs at least 2 models, got {n}")
        if m < 1:
            raise InvalidConfigurationError("consistency needs at least 1 shared noise input")
        if len(self.model_tags) != n:
            raise ContractViolation(f"{len(self.model_tags)} tags for {n} models")

    @property
    def n_models(self) -> int:
        return int(self.q.shape[0])

    @property
    def n_inputs(self) -> int:
        return int(self.q.shape[1])

    def save(self, path: Path) -> None:
        """JSON header at ``path`` plus a little-endian float64 payload next to it."""
        payload = path.with_suffix(".bin")
        payload.write_bytes(np.ascontiguousarray(self.q, dtype="<f8").tobytes())
        header = {"shape": list(self.q.shape), "dtype": "<f8", "model_tags": list(self.model_tags),
                  "seed": self.seed, "payload": payload.name}
        path.write_text(json.dumps(header, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> Self:
        header = json.loads(path.read_text(encoding="utf-8"))
        raw = (path.parent / header["payload"]).read_bytes()
        q = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(header["shape"])
        return cls(q, tuple(header["model_tags"]), int(header["seed"]))


@dataclass(frozen=True, slots=True)
class ConsistencyReport:
    """C in dB plus the per-(input, model) PSNR table it averages."""

    c_value: float
    pairwise: np.ndarray
    peak: float
    variant: str = "reference"
    model_tags: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict[str, Any]:
        return {
            "c_value": self.c_value,
            "pairwise": self.pairwise.tolist(),
            "peak": self.peak,
            "variant": self.variant,
            "model_tags": list(self.model_tags),
        }


def consistency(grid: SampleGrid, peak: float = DATA_PEAK) -> ConsistencyReport:
    """Mean PSNR against the fixed reference model 0, averaged over inputs then models."""
    n, m = grid.n_models, grid.n_inputs
    table = np.empty((m, n - 1))
    for j in range(m):
        for i in range(1, n):
            table[j, i - 1] = psnr(grid.q[0, j], grid.q[i, j], peak)
    c_value = float(np.mean(table.mean(axis=1)))
    return ConsistencyReport(c_value, table, peak, "reference", grid.model_tags)


def consistency_all_pairs(grid: SampleGrid, peak: float = DATA_PEAK) -> ConsistencyReport:
    """Variant averaging PSNR over every unordered model pair instead of against model 0."""
    n, m = grid.n_models, grid.n_inputs
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    table = np.empty((m, len(pairs)))
    for j in range(m):
        for k, (a, b) in enumerate(pairs):
            table[j, k] = psnr(grid.q[a, j], grid.q[b, j], peak)
    return ConsistencyReport(float(np.mean(table)), table, peak, "all_pairs", grid.model_tags)


def shared_noise_run(
    models: Sequence[Denoiser],
    sched: NoiseSchedule,
    seed: int,
    M: int,
    tags: Sequence[str] | None = None,
) -> SampleGrid:
    """Sample every model on the same ``M`` recorded noise streams."""
    if not models:
        raise ContractViolation("shared_noise_run needs at least one model")
    dims = {_input_dim(model) for model in models}
    if len(dims) != 1:
        raise ContractViolation(f"models disagree on data dimension: {sorted(dims)}")
    dim = dims.pop()
    stream = NoiseStream.from_seed(seed, M, dim, sched.T - 1)
    rows = [generate(model, sched, stream.replay(), M) for model in models]
    names = tuple(tags) if tags is not None else tuple(f"model{i}" for i in range(len(models)))
    return SampleGrid(np.stack(rows), names, seed)


def _input_dim(model: Denoiser) -> int:
    spec = getattr(model, "spec", None)
    if spec is None:
        raise ContractViolation(f"cannot infer the data dimension of {type(model).__name__}")
    return int(spec.input_dim)


def sliced_wasserstein(
    a: np.ndarray, b: np.ndarray, n_projections: int = DEFAULT_PROJECTIONS, seed: int = 0
) -> float:
    """Mean 1D Wasserstein-1 distance over seeded random unit projections."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    # 1-D inputs are sets of scalar samples
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolation(f"sample sets must be (n, d), got {a.shape} and {b.shape}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ContractViolation("sliced Wasserstein needs nonempty sample sets")
    if a.shape[1] != b.shape[1]:
        raise ContractViolation(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_projections, a.shape[1]))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    pa = a @ directions.T
    pb = b @ directions.T
    return float(np.mean([wasserstein_distance(pa[:, k], pb[:, k]) for k in range(n_projections)]))
