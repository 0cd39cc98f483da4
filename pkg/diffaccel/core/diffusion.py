"""Noise schedules, the forward process, both prediction losses and ancestral sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import StrEnum
from typing import Protocol, Self

import numpy as np

from diffaccel.errors import ContractViolation, InvalidConfigurationError, NoiseStreamExhausted
from diffaccel.utils import check_same_shape

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02
COSINE_OFFSET = 0.008
MAX_BETA = 0.999


class ScheduleKind(StrEnum):
    LINEAR = "linear"
    COSINE = "cosine"


class PredictionTarget(StrEnum):
    """What the denoiser outputs: the injected noise or the clean datum."""

    EPSILON = "epsilon"
    X0 = "x0"


@dataclass(frozen=True, slots=True)
class NoiseSchedule:
    """Precomputed forward-process tables.

    Attributes:
        kind: Which built-in schedule produced the tables.
        betas: Per-step noise levels, each in (0, 1).
        alphas: ``1 - betas``.
        alpha_bars: Running product of ``alphas``.
    """

    kind: ScheduleKind
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    def alpha_bar_prev(self, t: int) -> float:
        """``alpha_bars[t-1]`` with the convention that the value before step 0 is 1."""
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def posterior_variance(self, t: int) -> float:
        """The smaller reverse variance ``beta_t (1 - abar_{t-1}) / (1 - abar_t)``."""
        self.check_timestep(t)
        return float(self.betas[t] * (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bars[t]))

    def check_timestep(self, t: int | np.ndarray) -> None:
        arr = np.asarray(t)
        if arr.size and (arr.min() < 0 or arr.max() >= self.T):
            raise IndexError(f"timestep out of range [0, {self.T}): {t}")


def build_schedule(kind: ScheduleKind | str, T: int) -> NoiseSchedule:
    """Build the linear or cosine schedule with ``T`` steps."""
    if T < 2:
        raise InvalidConfigurationError(f"schedule needs T >= 2, got {T}")
    try:
        kind = ScheduleKind(kind)
    except ValueError as exc:
        raise InvalidConfigurationError(f"unknown schedule kind {kind!r}") from exc

    if kind is ScheduleKind.LINEAR:
        betas = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T, dtype=np.float64)
    else:
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos(((steps / T + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * math.pi / 2.0) ** 2
        ratio = f / f[0]
        betas = np.clip(1.0 - ratio[1:] / ratio[:-1], 0.0, MAX_BETA)

    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(kind=kind, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _per_row(table: np.ndarray, t: int | np.ndarray, like: np.ndarray) -> np.ndarray | float:
    """Gather ``table[t]`` broadcastable against ``like`` (rows of points)."""
    if np.ndim(t) == 0:
        return float(table[int(t)])
    values = table[np.asarray(t)]
    return values.reshape(values.shape + (1,) * (like.ndim - values.ndim))


def forward_sample(sched: NoiseSchedule, x0: np.ndarray, t: int | np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Closed-form forward marginal ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``t`` is either one timestep for all of ``x0`` or one per row.
    """
    sched.check_timestep(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    check_same_shape(x0, eps, "forward_sample")
    abar = _per_row(sched.alpha_bars, t, x0)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


@dataclass(frozen=True, slots=True)
class DiffusionBatch:
    """One training or evaluation batch of the forward process."""

    x0: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    xt: np.ndarray

    def __post_init__(self) -> None:
        n = self.x0.shape[0]
        if self.t.shape != (n,) or self.eps.shape != self.x0.shape or self.xt.shape != self.x0.shape:
            raise ContractViolation(
                f"batch fields disagree: x0 {self.x0.shape}, t {self.t.shape}, "
                f"eps {self.eps.shape}, xt {self.xt.shape}"
            )

    def __len__(self) -> int:
        return int(self.x0.shape[0])

    @classmethod
    def build(cls, sched: NoiseSchedule, x0: np.ndarray, t: np.ndarray, eps: np.ndarray) -> Self:
        t = np.asarray(t, dtype=np.int64)
        return cls(x0=np.asarray(x0, dtype=np.float64), t=t, eps=np.asarray(eps, dtype=np.float64),
                   xt=forward_sample(sched, x0, t, eps))

    def with_timesteps(self, sched: NoiseSchedule, t: np.ndarray) -> Self:
        """Same data and noise, re-noised at other timesteps."""
        return type(self).build(sched, self.x0, t, self.eps)


@dataclass(frozen=True, slots=True)
class TimestepFilter:
    """Restricts a loss evaluation to one timestep or an inclusive range."""

    lo: int
    hi: int | None = None

    def __post_init__(self) -> None:
        hi = self.lo if self.hi is None else self.hi
        if self.lo < 0 or hi < self.lo:
            raise InvalidConfigurationError(f"bad timestep filter [{self.lo}, {hi}]")

    @classmethod
    def parse(cls, text: str) -> Self:
        """``"990"`` or ``"0:49"``."""
        lo, _, hi = text.partition(":")
        try:
            return cls(int(lo), int(hi) if hi else None)
        except ValueError as exc:
            raise InvalidConfigurationError(f"bad timestep filter {text!r}") from exc

    def timesteps(self, n: int) -> np.ndarray:
        """Deterministic assignment cycling through the range row by row."""
        hi = self.lo if self.hi is None else self.hi
        return self.lo + np.arange(n, dtype=np.int64) % (hi - self.lo + 1)

    def check_range(self, T: int) -> Self:
        hi = self.lo if self.hi is None else self.hi
        if hi >= T:
            raise InvalidConfigurationError(f"timestep filter {self.describe()} outside [0, {T - 1}]")
        return self

    def apply(self, sched: NoiseSchedule, batch: DiffusionBatch) -> DiffusionBatch:
        self.check_range(sched.T)
        return batch.with_timesteps(sched, self.timesteps(len(batch)))

    def describe(self) -> str:
        return str(self.lo) if self.hi is None else f"{self.lo}:{self.hi}"


def _mse(prediction: np.ndarray, target: np.ndarray, what: str) -> float:
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    check_same_shape(prediction, target, what)
    return float(np.mean((prediction - target) ** 2))


def simple_loss(eps_hat: np.ndarray, eps: np.ndarray) -> float:
    """Mean squared noise-prediction error."""
    return _mse(eps_hat, eps, "simple_loss")


def x0_loss(x0_hat: np.ndarray, x0: np.ndarray) -> float:
    """Mean squared clean-datum prediction error."""
    return _mse(x0_hat, x0, "x0_loss")


def regression_target(target: PredictionTarget, batch: DiffusionBatch) -> np.ndarray:
    return batch.eps if target is PredictionTarget.EPSILON else batch.x0


def posterior_mean(
    sched: NoiseSchedule,
    target: PredictionTarget,
    model_output: np.ndarray,
    xt: np.ndarray,
    t: int,
) -> np.ndarray:
    """Mean of q(x_{t-1} | x_t, x0) with x0 (or eps) replaced by the model output."""
    beta = float(sched.betas[t])
    alpha = float(sched.alphas[t])
    abar = float(sched.alpha_bars[t])
    if target is PredictionTarget.EPSILON:
        return (xt - (beta / math.sqrt(1.0 - abar)) * model_output) / math.sqrt(alpha)
    abar_prev = sched.alpha_bar_prev(t)
    coef_x0 = beta * math.sqrt(abar_prev) / (1.0 - abar)
    coef_xt = (1.0 - abar_prev) * math.sqrt(alpha) / (1.0 - abar)
    return coef_x0 * model_output + coef_xt * xt


def reverse_step(
    sched: NoiseSchedule,
    target: PredictionTarget,
    model_output: np.ndarray,
    xt: np.ndarray,
    t: int,
    z: np.ndarray,
) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1}; no noise is added at t = 0."""
    sched.check_timestep(t)
    model_output = np.asarray(model_output, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    check_same_shape(model_output, xt, "reverse_step")
    mean = posterior_mean(sched, target, model_output, xt, t)
    if t == 0:
        return mean
    z = np.asarray(z, dtype=np.float64)
    check_same_shape(z, xt, "reverse_step noise")
    return mean + math.sqrt(sched.posterior_variance(t)) * z


class NoiseStream:
    """Recorded Gaussian draws for the reverse chain: ``x_T`` plus one ``z`` per step.

    Each sample j draws from its own child of the seed, so sample j sees the
    same noise regardless of how many samples are requested alongside it.
    """

    def __init__(self, initial: np.ndarray, steps: np.ndarray) -> None:
        # steps: (n_steps, n, d), consumed front to back
        self.initial = initial
        self._steps = steps
        self._cursor = 0

    @classmethod
    def from_seed(cls, seed: int, n: int, dim: int, n_steps: int) -> Self:
        initial = np.empty((n, dim), dtype=np.float64)
        steps = np.empty((n_steps, n, dim), dtype=np.float64)
        for j, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
            rng = np.random.default_rng(child)
            initial[j] = rng.standard_normal(dim)
            steps[:, j, :] = rng.standard_normal((n_steps, dim))
        return cls(initial, steps)

    @property
    def remaining(self) -> int:
        return self._steps.shape[0] - self._cursor

    def next(self) -> np.ndarray:
        if self._cursor >= self._steps.shape[0]:
            raise NoiseStreamExhausted(f"noise stream exhausted after {self._cursor} draws")
        z = self._steps[self._cursor]
        self._cursor += 1
        return z

    def replay(self) -> NoiseStream:
        """A fresh cursor over the same recorded draws."""
        return NoiseStream(self.initial, self._steps)


class Denoiser(Protocol):
    """Anything that maps (x_t, t) to a prediction of its declared target."""

    @property
    def target(self) -> PredictionTarget: ...

    def forward(self, x: np.ndarray, t: int | np.ndarray) -> np.ndarray: ...


def generate(model: Denoiser, sched: NoiseSchedule, noise_stream: NoiseStream, n: int) -> np.ndarray:
    """Run the full reverse chain from ``x_T`` down to ``x_0``.

    The stream must hold at least ``n`` initial points and ``T - 1`` step draws.
    """
    if noise_stream.initial.shape[0] < n:
        raise NoiseStreamExhausted(f"noise stream holds {noise_stream.initial.shape[0]} samples, asked for {n}")
    x = noise_stream.initial[:n].copy()
    if n == 0:
        return x
    for t in range(sched.T - 1, -1, -1):
        z = noise_stream.next()[:n] if t > 0 else np.zeros_like(x)
        out = model.forward(x, t)
        x = reverse_step(sched, model.target, out, x, t, z)
    return x
