"""Loss-landscape instruments: 1D interpolation, 2D surfaces, Hessian-vector products and Lanczos spectra.

All tools talk to a model only through a :class:`~diffaccel.core.models.GradientOracle`
and evaluate every point on one fixed batch.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import StrEnum
from typing import Any, Self

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import LinearOperator

from diffaccel.core.diffusion import TimestepFilter
from diffaccel.core.models import GradientOracle, ParameterVector
from diffaccel.errors import ContractViolation, NumericError

logger = logging.getLogger(__name__)

HVP_RELATIVE_STEP = 1e-4
BREAKDOWN_TOL = 1e-12


class Normalization(StrEnum):
    NONE = "none"
    LAYERWISE = "layerwise"


@dataclass(frozen=True, slots=True)
class InterpolationCurve:
    alphas: np.ndarray
    losses: np.ndarray
    timestep_filter: TimestepFilter | None = None

    def roughness(self) -> float:
        """Mean absolute second difference of the losses."""
        return mean_abs_second_difference(self.losses)


@dataclass(frozen=True, slots=True)
class Direction:
    values: np.ndarray
    normalization: Normalization = Normalization.NONE

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("direction contains non-finite values")

    @classmethod
    def random(
        cls, theta: ParameterVector, rng: np.random.Generator, normalization: Normalization = Normalization.LAYERWISE
    ) -> Self:
        """Gaussian direction; in layerwise mode each block gets its anchor block's norm."""
        raw = rng.standard_normal(len(theta))
        normalization = Normalization(normalization)
        if normalization is Normalization.LAYERWISE:
            raw = _match_layer_norms(raw, theta)
        return cls(raw, normalization)

    @classmethod
    def between(cls, theta_from: np.ndarray, theta_to: np.ndarray) -> Self:
        """Unnormalized displacement ``theta_to - theta_from`` (interpolation axis)."""
        return cls(np.asarray(theta_to, dtype=np.float64) - np.asarray(theta_from, dtype=np.float64))


def _match_layer_norms(raw: np.ndarray, theta: ParameterVector) -> np.ndarray:
    out = raw.copy()
    for slot in theta.layout:
        sl = slice(slot.offset, slot.offset + slot.size)
        block_norm = np.linalg.norm(out[sl])
        if block_norm > 0:
            out[sl] *= np.linalg.norm(theta.values[sl]) / block_norm
    return out


def gram_schmidt(d1: Direction, d2: Direction) -> Direction:
    """``d2`` made orthogonal to ``d1``, rescaled to its original norm."""
    a, b = d1.values, d2.values
    denom = float(a @ a)
    if denom == 0:
        raise ContractViolation("first direction is zero")
    ortho = b - (float(a @ b) / denom) * a
    norm = np.linalg.norm(ortho)
    if norm == 0:
        raise ContractViolation("directions are parallel")
    return Direction(ortho * (np.linalg.norm(b) / norm), d2.normalization)


def _loss(oracle: GradientOracle, values: np.ndarray, batch: Any, timestep_filter: TimestepFilter | None) -> float:
    loss, _ = oracle(values, batch, timestep_filter)
    return loss


def _evaluate_all(
    oracle: GradientOracle,
    points: Sequence[np.ndarray],
    batch: Any,
    timestep_filter: TimestepFilter | None,
    workers: int,
) -> np.ndarray:
    if workers <= 1:
        return np.array([_loss(oracle, p, batch, timestep_filter) for p in points])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves grid order
        return np.array(list(pool.map(lambda p: _loss(oracle, p, batch, timestep_filter), points)))


def interpolate_1d(
    oracle: GradientOracle,
    theta_a: np.ndarray,
    theta_b: np.ndarray,
    alphas: np.ndarray,
    batch: Any,
    timestep_filter: TimestepFilter | None = None,
    workers: int = 1,
) -> InterpolationCurve:
    """Loss along ``alpha * theta_a + (1 - alpha) * theta_b``."""
    theta_a = np.asarray(theta_a, dtype=np.float64)
    theta_b = np.asarray(theta_b, dtype=np.float64)
    if theta_a.shape != theta_b.shape:
        raise ContractViolation(f"anchor lengths differ: {theta_a.shape} vs {theta_b.shape}")
    alphas = np.asarray(alphas, dtype=np.float64)
    points = [alpha * theta_a + (1.0 - alpha) * theta_b for alpha in alphas]
    losses = _evaluate_all(oracle, points, batch, timestep_filter, workers)
    return InterpolationCurve(alphas, losses, timestep_filter)


def surface_2d(
    oracle: GradientOracle,
    theta: np.ndarray,
    d1: Direction,
    d2: Direction,
    grid: np.ndarray,
    batch: Any,
    timestep_filter: TimestepFilter | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Loss at ``theta + u d1 + v d2`` for every (u, v) in ``grid x grid``.

    Returns an array indexed ``[i, j]`` for ``u = grid[i]``, ``v = grid[j]``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if d1.values.shape != theta.shape or d2.values.shape != theta.shape:
        raise ContractViolation("direction length differs from parameter length")
    d2 = gram_schmidt(d1, d2)
    grid = np.asarray(grid, dtype=np.float64)
    points = [theta + u * d1.values + v * d2.values for u in grid for v in grid]
    losses = _evaluate_all(oracle, points, batch, timestep_filter, workers)
    return losses.reshape(grid.shape[0], grid.shape[0])


def hvp(
    oracle: GradientOracle,
    theta: np.ndarray,
    vec: np.ndarray,
    batch: Any,
    timestep_filter: TimestepFilter | None = None,
) -> np.ndarray:
    """Hessian-vector product by central differences of gradients along ``vec``."""
    theta = np.asarray(theta, dtype=np.float64)
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ContractViolation("hvp direction must be nonzero")
    r = HVP_RELATIVE_STEP * (1.0 + float(np.linalg.norm(theta)))
    unit = vec / norm
    _, g_plus = oracle(theta + r * unit, batch, timestep_filter)
    _, g_minus = oracle(theta - r * unit, batch, timestep_filter)
    result = (g_plus - g_minus) / (2.0 * r) * norm
    if not np.all(np.isfinite(result)):
        raise NumericError("non-finite Hessian-vector product", r)
    return result


def hessian_operator(
    oracle: GradientOracle, theta: np.ndarray, batch: Any, timestep_filter: TimestepFilter | None = None
) -> LinearOperator:
    """The Hessian at ``theta`` as a symmetric linear operator (never materialized)."""
    n = int(np.asarray(theta).shape[0])

    def matvec(v: np.ndarray) -> np.ndarray:
        v = np.ravel(v)
        if not np.any(v):
            return np.zeros(n)
        return hvp(oracle, theta, v, batch, timestep_filter)

    return LinearOperator((n, n), matvec=matvec, rmatvec=matvec, dtype=np.float64)


@dataclass(frozen=True, slots=True)
class SpectrumEstimate:
    """Ritz values with their quadrature weights and the summaries derived from them.

    ``iterations`` counts the Lanczos steps actually run, which is fewer than
    requested after a breakdown (the longest probe when there are several).
    """

    ritz_values: np.ndarray
    weights: np.ndarray
    lambda1: float
    mean_mu: float
    var_sigma2: float
    iterations: int
    probe_seed: int
    n_probes: int = 1
    breakdown: bool = False

    @classmethod
    def from_quadrature(
        cls,
        ritz: np.ndarray,
        weights: np.ndarray,
        iterations: int,
        probe_seed: int,
        n_probes: int = 1,
        breakdown: bool = False,
    ) -> Self:
        order = np.argsort(ritz)[::-1]
        ritz = np.asarray(ritz, dtype=np.float64)[order]
        weights = np.asarray(weights, dtype=np.float64)[order]
        weights = weights / weights.sum()
        mean = float(weights @ ritz)
        var = float(weights @ (ritz - mean) ** 2)
        return cls(ritz, weights, float(ritz[0]), mean, var, iterations, probe_seed, n_probes, breakdown)

    def density(self, grid: np.ndarray, width: float | None = None) -> np.ndarray:
        """Gaussian-smoothed spectral density over ``grid``."""
        grid = np.asarray(grid, dtype=np.float64)
        if width is None:
            span = float(self.ritz_values.max() - self.ritz_values.min())
            width = max(span, 1e-12) / 50.0
        kernels = np.exp(-((grid[:, None] - self.ritz_values[None, :]) ** 2) / (2.0 * width**2))
        return kernels @ self.weights / (width * np.sqrt(2.0 * np.pi))

    def to_dict(self) -> dict[str, Any]:
        return {
            "ritz_values": self.ritz_values.tolist(),
            "weights": self.weights.tolist(),
            "lambda1": self.lambda1,
            "mean_mu": self.mean_mu,
            "var_sigma2": self.var_sigma2,
            "iterations": self.iterations,
            "probe_seed": self.probe_seed,
            "n_probes": self.n_probes,
            "breakdown": self.breakdown,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Self:
        return cls(
            np.asarray(data["ritz_values"], dtype=np.float64),
            np.asarray(data["weights"], dtype=np.float64),
            float(data["lambda1"]),
            float(data["mean_mu"]),
            float(data["var_sigma2"]),
            int(data["iterations"]),
            int(data["probe_seed"]),
            int(data.get("n_probes", 1)),
            bool(data.get("breakdown", False)),
        )


def _lanczos_tridiagonal(
    op: LinearOperator, probe: np.ndarray, m: int
) -> tuple[np.ndarray, np.ndarray, bool]:
    """m-step Lanczos with full reorthogonalization; returns (diag, offdiag, breakdown)."""
    n = probe.shape[0]
    basis = np.zeros((m, n))
    diag: list[float] = []
    offdiag: list[float] = []
    v = probe / np.linalg.norm(probe)
    for j in range(m):
        basis[j] = v
        w = op.matvec(v)
        alpha = float(w @ v)
        w = w - alpha * v
        if j > 0:
            w = w - offdiag[-1] * basis[j - 1]
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            w = w - basis[: j + 1].T @ (basis[: j + 1] @ w)
        diag.append(alpha)
        if j == m - 1:
            break
        beta = float(np.linalg.norm(w))
        if beta < BREAKDOWN_TOL:
            return np.array(diag), np.array(offdiag), True
        offdiag.append(beta)
        v = w / beta
    return np.array(diag), np.array(offdiag), False


def _ritz_pairs(diag: np.ndarray, offdiag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if diag.shape[0] == 1:
        return diag.copy(), np.ones(1)
    values, vectors = eigh_tridiagonal(diag, offdiag)
    return values, vectors[0] ** 2


def lanczos_spectrum(
    oracle: GradientOracle,
    theta: np.ndarray,
    m: int,
    probe_seed: int,
    batch: Any,
    timestep_filter: TimestepFilter | None = None,
    n_probes: int = 1,
) -> SpectrumEstimate:
    """Stochastic Lanczos quadrature estimate of the Hessian spectrum at ``theta``.

    Probes are Rademacher vectors scaled to unit length; with several probes
    the quadrature nodes are pooled with equal probe weights.
    """
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.shape[0]
    if not 1 <= m <= n:
        raise ContractViolation(f"need 1 <= m <= {n} Lanczos iterations, got {m}")
    if n_probes < 1:
        raise ContractViolation(f"need at least one probe, got {n_probes}")
    op = hessian_operator(oracle, theta, batch, timestep_filter)
    rng = np.random.default_rng(probe_seed)
    all_ritz, all_weights = [], []
    any_breakdown = False
    steps = 0
    for k in range(n_probes):
        probe = rng.choice([-1.0, 1.0], size=n)
        diag, offdiag, breakdown = _lanczos_tridiagonal(op, probe, m)
        if breakdown:
            logger.info("Lanczos breakdown on probe %d after %d steps", k, diag.shape[0])
        any_breakdown |= breakdown
        steps = max(steps, diag.shape[0])
        ritz, weights = _ritz_pairs(diag, offdiag)
        all_ritz.append(ritz)
        all_weights.append(weights / weights.sum() / n_probes)
    return SpectrumEstimate.from_quadrature(
        np.concatenate(all_ritz), np.concatenate(all_weights), steps, probe_seed, n_probes, any_breakdown
    )


def mean_abs_second_difference(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 3:
        return 0.0
    return float(np.mean(np.abs(np.diff(values, n=2))))
