"""Curriculum timestep schedule: uniform, Gaussian and gamma-mixed distributions over timesteps."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
from typing import Self

import numpy as np

from diffaccel.errors import ContractViolation, InvalidConfigurationError


NORMALIZATION_TOL = 1e-12
DEFAULT_MU_FRACTION = 0.3


class CltsVariant(StrEnum):
    MIXED = "mixed"
    # Gaussian whose mean slides from T-1 to mu; kept to replicate its weak result.
    SHIFTED = "shifted"


@dataclass(frozen=True, slots=True)
class TimestepDistribution:
    """Discrete probability vector over timesteps 0..T-1 with its CDF."""

    probs: np.ndarray
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.shape[0] < 2:
            raise ContractViolation(f"need a vector over at least 2 timesteps, got shape {probs.shape}")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ContractViolation("probabilities must be finite and nonnegative")
        total = probs.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ContractViolation(f"probabilities sum to {total!r}, not 1")
        cdf = np.cumsum(probs)
        cdf /= cdf[-1]
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "cdf", cdf)

    @property
    def T(self) -> int:
        return int(self.probs.shape[0])

    @classmethod
    def from_weights(cls, weights: np.ndarray) -> Self:
        weights = np.asarray(weights, dtype=np.float64)
        return cls(weights / weights.sum())


@dataclass(frozen=True, slots=True)
class CltsConfig:
    """Parameters of the Gaussian component and the ramp toward it.

    Attributes:
        T: Number of timesteps.
        mu: Mode of the Gaussian, in timestep units.
        sigma: Spread of the Gaussian; T by default.
        target_iteration: Iteration at which the mixture becomes fully Gaussian.
        variant: ``mixed`` (default) or the ``shifted`` replication variant.
    """

    T: int
    mu: float
    sigma: float
    target_iteration: int
    variant: CltsVariant = CltsVariant.MIXED

    def __post_init__(self) -> None:
        if self.T < 2:
            raise InvalidConfigurationError(f"CLTS needs T >= 2, got {self.T}")
        if not self.sigma > 0:
            raise InvalidConfigurationError(f"CLTS sigma must be positive, got {self.sigma}")
        if self.target_iteration < 1:
            raise InvalidConfigurationError(f"CLTS target_iteration must be >= 1, got {self.target_iteration}")
        object.__setattr__(self, "variant", CltsVariant(self.variant))

    @classmethod
    def for_horizon(
        cls,
        T: int,
        target_iteration: int,
        mu: float | None = None,
        sigma: float | None = None,
        variant: CltsVariant | str = CltsVariant.MIXED,
    ) -> Self:
        """Fill in the defaults mu = 0.3 T and sigma = T."""
        return cls(
            T=T,
            mu=DEFAULT_MU_FRACTION * T if mu is None else mu,
            sigma=float(T) if sigma is None else sigma,
            target_iteration=target_iteration,
            variant=CltsVariant(variant),
        )


def uniform_dist(T: int) -> TimestepDistribution:
    if T < 2:
        raise InvalidConfigurationError(f"uniform distribution needs T >= 2, got {T}")
    return TimestepDistribution(np.full(T, 1.0 / T))


def _gaussian_weights(T: int, mu: float, sigma: float) -> np.ndarray:
    t = np.arange(T, dtype=np.float64)
    return np.exp(-((t - mu) ** 2) / (2.0 * sigma**2))


def gaussian_dist(cfg: CltsConfig) -> TimestepDistribution:
    """The Gaussian density evaluated on integer timesteps and renormalized."""
    return TimestepDistribution.from_weights(_gaussian_weights(cfg.T, cfg.mu, cfg.sigma))


def shifted_gaussian_dist(cfg: CltsConfig, iteration: int) -> TimestepDistribution:
    """Gaussian whose mean moves linearly from T-1 to ``cfg.mu`` over the ramp."""
    gamma = gamma_at(iteration, cfg.target_iteration)
    mu = (1.0 - gamma) * (cfg.T - 1) + gamma * cfg.mu
    return TimestepDistribution.from_weights(_gaussian_weights(cfg.T, mu, cfg.sigma))


def gamma_at(iteration: int, target: int) -> float:
    """Ramp ``min(1, iteration / target)``."""
    if target < 1:
        raise InvalidConfigurationError(f"target iteration must be >= 1, got {target}")
    return min(1.0, iteration / target)


def mix(u: TimestepDistribution, n: TimestepDistribution, gamma: float) -> TimestepDistribution:
    """Entrywise ``(1 - gamma) u + gamma n``."""
    if u.T != n.T:
        raise ContractViolation(f"cannot mix distributions over {u.T} and {n.T} timesteps")
    if not 0.0 <= gamma <= 1.0:
        raise ContractViolation(f"gamma must lie in [0, 1], got {gamma}")
    probs = (1.0 - gamma) * u.probs + gamma * n.probs
    # renormalize only when rounding pushed the sum out of tolerance
    if abs(probs.sum() - 1.0) > NORMALIZATION_TOL:
        probs = probs / probs.sum()
    return TimestepDistribution(probs)


def sample_timesteps(dist: TimestepDistribution, rng: np.random.Generator, count: int) -> np.ndarray:
    """Inverse-CDF draws of ``count`` timesteps."""
    u = rng.random(count)
    idx = np.searchsorted(dist.cdf, u, side="right")
    return np.minimum(idx, dist.T - 1).astype(np.int64)


class TimestepCurriculum:
    """The per-iteration timestep distribution used by the training loop."""

    def __init__(self, cfg: CltsConfig, enabled: bool = True) -> None:
        self.cfg = cfg
        self.enabled = enabled
        self._uniform = uniform_dist(cfg.T)
        self._gaussian = gaussian_dist(cfg)

    def gamma(self, iteration: int) -> float:
        return gamma_at(iteration, self.cfg.target_iteration) if self.enabled else 0.0

    def distribution_at(self, iteration: int) -> TimestepDistribution:
        if not self.enabled:
            return self._uniform
        if self.cfg.variant is CltsVariant.SHIFTED:
            return shifted_gaussian_dist(self.cfg, iteration)
        return mix(self._uniform, self._gaussian, self.gamma(iteration))

    def sample(self, iteration: int, rng: np.random.Generator, count: int) -> np.ndarray:
        return sample_timesteps(self.distribution_at(iteration), rng, count)
