"""Adam with decaying momentum, learning-rate compensation, a momentum floor and parameter EMA.

The momentum coefficient follows the decaying-momentum rule

    beta1(tau) = beta0 (1 - tau) / ((1 - beta0) + beta0 (1 - tau)),  tau = step / total

clamped below at ``beta_floor``, and the learning rate is rescaled so that
``lr_t (1 - beta1_t)`` stays equal to ``l0 (1 - beta0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Self

import numpy as np

from diffaccel.errors import InvalidConfigurationError, TrainingDivergenceError


@dataclass(frozen=True, slots=True)
class MdlrcConfig:
    """Optimizer hyperparameters.

    Attributes:
        beta0: Initial first-moment factor.
        beta2: Second-moment factor.
        l0: Initial learning rate.
        total_iterations: Planned length of the run; ``None`` keeps tau at 0.
        beta_floor: Lower limit for the decayed momentum.
        ema_rate: Shadow-average factor.
        epsilon_adam: Denominator stabilizer.
        weight_decay: Decoupled decay factor.
        momentum_decay: Decay beta1 over the run (off: fixed-beta1 Adam).
        lr_compensation: Rescale the learning rate with beta1 (off: constant l0).
        grad_clip: Optional global-norm clip; no clipping when ``None``.
    """

    beta0: float = 0.8
    beta2: float = 0.999
    l0: float = 1e-4
    total_iterations: int | None = None
    beta_floor: float = 0.4
    ema_rate: float = 0.9999
    epsilon_adam: float = 1e-8
    weight_decay: float = 0.0
    momentum_decay: bool = True
    lr_compensation: bool = True
    grad_clip: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta_floor <= self.beta0 < 1.0:
            raise InvalidConfigurationError(
                f"need 0 <= beta_floor <= beta0 < 1, got floor={self.beta_floor}, beta0={self.beta0}"
            )
        if not 0.0 < self.beta2 < 1.0:
            raise InvalidConfigurationError(f"beta2 must lie in (0, 1), got {self.beta2}")
        if not self.l0 > 0.0:
            raise InvalidConfigurationError(f"l0 must be positive, got {self.l0}")
        if not 0.0 <= self.ema_rate < 1.0:
            raise InvalidConfigurationError(f"ema_rate must lie in [0, 1), got {self.ema_rate}")
        if self.total_iterations is not None and self.total_iterations < 1:
            raise InvalidConfigurationError(f"total_iterations must be >= 1, got {self.total_iterations}")
        if self.epsilon_adam < 0.0 or self.weight_decay < 0.0:
            raise InvalidConfigurationError("epsilon_adam and weight_decay must be nonnegative")
        if self.grad_clip is not None and not self.grad_clip > 0.0:
            raise InvalidConfigurationError(f"grad_clip must be positive, got {self.grad_clip}")


@dataclass(frozen=True, slots=True)
class OptimizerState:
    """Moments, counters and the EMA shadow; replaced, never mutated, by :func:`step`."""

    m: np.ndarray
    v: np.ndarray
    step: int
    beta1_product: float
    current_beta1: float
    current_lr: float
    ema_params: np.ndarray

    @classmethod
    def init(cls, params: np.ndarray, cfg: MdlrcConfig) -> Self:
        params = np.asarray(params, dtype=np.float64)
        return cls(
            m=np.zeros_like(params),
            v=np.zeros_like(params),
            step=0,
            beta1_product=1.0,
            current_beta1=cfg.beta0,
            current_lr=cfg.l0,
            ema_params=params.copy(),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "beta1_product": self.beta1_product,
            "current_beta1": self.current_beta1,
            "current_lr": self.current_lr,
        }


def momentum_at(tau: float, cfg: MdlrcConfig) -> float:
    """Decayed momentum at progress ``tau``, clamped at ``cfg.beta_floor``."""
    b0 = cfg.beta0
    if tau <= 0.0:
        return max(b0, cfg.beta_floor)
    remaining = 1.0 - tau
    raw = b0 * remaining / ((1.0 - b0) + b0 * remaining)
    return max(raw, cfg.beta_floor)


def lr_at(beta_t: float, cfg: MdlrcConfig) -> float:
    """Learning rate keeping ``lr (1 - beta_t)`` at ``l0 (1 - beta0)``."""
    if beta_t >= 1.0:
        raise InvalidConfigurationError(f"momentum must be < 1 for compensation, got {beta_t}")
    return cfg.l0 * ((1.0 - cfg.beta0) / (1.0 - beta_t))


def scheduled_hyperparams(step: int, cfg: MdlrcConfig) -> tuple[float, float]:
    """(beta1, lr) used by the update that follows ``step`` completed updates."""
    if cfg.momentum_decay:
        tau = 0.0 if cfg.total_iterations is None else min(1.0, step / cfg.total_iterations)
        beta1 = momentum_at(tau, cfg)
    else:
        beta1 = cfg.beta0
    lr = lr_at(beta1, cfg) if cfg.lr_compensation else cfg.l0
    return beta1, lr


def step(
    state: OptimizerState, params: np.ndarray, grad: np.ndarray, cfg: MdlrcConfig
) -> tuple[np.ndarray, OptimizerState]:
    """One Adam update with the scheduled beta1 and learning rate."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergenceError("non-finite gradient passed to optimizer", iteration=state.step)
    if cfg.grad_clip is not None:
        norm = float(np.linalg.norm(grad))
        if norm > cfg.grad_clip:
            grad = grad * (cfg.grad_clip / norm)

    beta1, lr = scheduled_hyperparams(state.step, cfg)
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    # Fixed beta1 keeps the textbook power form; a varying one needs the realized product.
    fixed = not cfg.momentum_decay or cfg.total_iterations is None
    beta1_product = beta1**t if fixed else state.beta1_product * beta1
    m_hat = m / (1.0 - beta1_product)
    v_hat = v / (1.0 - cfg.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon_adam)
    if cfg.weight_decay:
        new_params = new_params - lr * cfg.weight_decay * params

    if not np.all(np.isfinite(new_params)):
        raise TrainingDivergenceError("non-finite parameters after update", iteration=t)
    new_state = replace(
        state,
        m=m,
        v=v,
        step=t,
        beta1_product=beta1_product,
        current_beta1=beta1,
        current_lr=lr,
    )
    return new_params, new_state


def ema_update(state: OptimizerState, params: np.ndarray, cfg: MdlrcConfig) -> OptimizerState:
    """``ema <- rate * ema + (1 - rate) * params``."""
    ema = cfg.ema_rate * state.ema_params + (1.0 - cfg.ema_rate) * params
    return replace(state, ema_params=ema)
