"""Toy MLP denoisers and a minimal adversarial pair.

Every model keeps its weights in one flat :class:`ParameterVector` and exposes
a loss-and-gradient oracle over that vector, so the landscape tools never need
to know which architecture they are probing.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from enum import StrEnum
from typing import Any, Protocol, Self

import numpy as np
from scipy.special import expit

from diffaccel.core.diffusion import DiffusionBatch, NoiseSchedule, PredictionTarget, TimestepFilter, regression_target
from diffaccel.errors import ContractViolation, InvalidConfigurationError, TrainingDivergenceError

LATENT_DIM = 16
EMBED_MIN_FREQ = 1e-4


class Activation(StrEnum):
    SILU = "silu"
    TANH = "tanh"


def _activate(kind: Activation, a: np.ndarray) -> np.ndarray:
    if kind is Activation.SILU:
        return a * expit(a)
    return np.tanh(a)


def _activate_grad(kind: Activation, a: np.ndarray) -> np.ndarray:
    if kind is Activation.SILU:
        s = expit(a)
        return s * (1.0 + a * (1.0 - s))
    return 1.0 - np.tanh(a) ** 2


@dataclass(frozen=True, slots=True)
class LayerSlot:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass(frozen=True, slots=True)
class ParameterVector:
    """All trainable weights of one model, flattened in layout order."""

    values: np.ndarray
    layout: tuple[LayerSlot, ...]

    def __post_init__(self) -> None:
        expected = sum(slot.size for slot in self.layout)
        if self.values.shape != (expected,):
            raise ContractViolation(f"parameter vector has shape {self.values.shape}, layout needs ({expected},)")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("parameter vector contains non-finite values")

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> Self:
        layout = []
        offset = 0
        for name, array in arrays.items():
            layout.append(LayerSlot(name, offset, tuple(array.shape)))
            offset += array.size
        values = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays.values()])
        return cls(values, tuple(layout))

    def unflatten(self) -> dict[str, np.ndarray]:
        return {
            slot.name: self.values[slot.offset : slot.offset + slot.size].reshape(slot.shape)
            for slot in self.layout
        }

    def with_values(self, values: np.ndarray) -> ParameterVector:
        return ParameterVector(np.asarray(values, dtype=np.float64), self.layout)

    def layout_dict(self) -> list[dict[str, Any]]:
        return [{"name": s.name, "offset": s.offset, "shape": list(s.shape)} for s in self.layout]

    @staticmethod
    def layout_from_dict(records: list[dict[str, Any]]) -> tuple[LayerSlot, ...]:
        return tuple(LayerSlot(r["name"], int(r["offset"]), tuple(r["shape"])) for r in records)


@dataclass(frozen=True, slots=True)
class TimeEmbedding:
    """Sinusoidal timestep features ``[sin(t w_k), cos(t w_k)]``.

    The frequencies form a geometric ladder whose periods run from 1 to 1e4
    (in units of 2*pi).
    """

    dim: int

    def __post_init__(self) -> None:
        if self.dim < 0 or self.dim % 2:
            raise InvalidConfigurationError(f"time embedding dim must be even and >= 0, got {self.dim}")

    @property
    def frequencies(self) -> np.ndarray:
        return np.geomspace(1.0, EMBED_MIN_FREQ, self.dim // 2)

    def __call__(self, t: int | np.ndarray, n: int) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        phases = t[:, None] * self.frequencies[None, :]
        return np.concatenate([np.sin(phases), np.cos(phases)], axis=1)


@dataclass(frozen=True, slots=True)
class MLPSpec:
    """Architecture descriptor; serialized inside checkpoints."""

    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = (128, 128, 128)
    activation: Activation = Activation.SILU
    time_embed_dim: int = 32

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise InvalidConfigurationError(f"bad MLP sizes {self.input_dim}->{self.hidden}->{self.output_dim}")
        TimeEmbedding(self.time_embed_dim)

    @property
    def embedding(self) -> TimeEmbedding:
        return TimeEmbedding(self.time_embed_dim)

    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim + self.time_embed_dim, *self.hidden, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))

    def layout(self) -> tuple[LayerSlot, ...]:
        slots = []
        offset = 0
        for i, (fan_in, fan_out) in enumerate(self.layer_shapes()):
            slots.append(LayerSlot(f"layer{i}.weight", offset, (fan_in, fan_out)))
            offset += fan_in * fan_out
            slots.append(LayerSlot(f"layer{i}.bias", offset, (fan_out,)))
            offset += fan_out
        return tuple(slots)

    @property
    def n_params(self) -> int:
        return sum(slot.size for slot in self.layout())

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": list(self.hidden),
            "activation": str(self.activation),
            "time_embed_dim": self.time_embed_dim,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:
        return cls(
            input_dim=int(data["input_dim"]),
            output_dim=int(data["output_dim"]),
            hidden=tuple(int(h) for h in data["hidden"]),
            activation=Activation(data.get("activation", "silu")),
            time_embed_dim=int(data.get("time_embed_dim", 0)),
        )


def init_params(spec: MLPSpec, rng: np.random.Generator, zero_final: bool = False) -> ParameterVector:
    """Fan-in scaled uniform initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    arrays: dict[str, np.ndarray] = {}
    shapes = spec.layer_shapes()
    for i, (fan_in, fan_out) in enumerate(shapes):
        bound = 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        bias = rng.uniform(-bound, bound, size=(fan_out,))
        if zero_final and i == len(shapes) - 1:
            weight = np.zeros_like(weight)
            bias = np.zeros_like(bias)
        arrays[f"layer{i}.weight"] = weight
        arrays[f"layer{i}.bias"] = bias
    return ParameterVector.from_arrays(arrays)


def _mlp_input(spec: MLPSpec, x: np.ndarray, t: int | np.ndarray | None) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ContractViolation(f"expected input of shape (n, {spec.input_dim}), got {x.shape}")
    if spec.time_embed_dim == 0:
        return x
    if t is None:
        raise ContractViolation("time-conditioned MLP called without timesteps")
    return np.concatenate([x, spec.embedding(t, x.shape[0])], axis=1)


def _mlp_forward(
    spec: MLPSpec, arrays: Mapping[str, np.ndarray], h0: np.ndarray
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Forward pass returning the output and (layer input, pre-activation) per layer."""
    n_layers = len(spec.layer_shapes())
    cache = []
    h = h0
    for i in range(n_layers):
        a = h @ arrays[f"layer{i}.weight"] + arrays[f"layer{i}.bias"]
        cache.append((h, a))
        h = _activate(spec.activation, a) if i < n_layers - 1 else a
    return h, cache


def _mlp_backward(
    spec: MLPSpec,
    arrays: Mapping[str, np.ndarray],
    cache: list[tuple[np.ndarray, np.ndarray]],
    dout: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Reverse accumulation; returns parameter gradients and the gradient at the input."""
    n_layers = len(cache)
    grads: dict[str, np.ndarray] = {}
    delta = dout
    for i in range(n_layers - 1, -1, -1):
        h_in, a = cache[i]
        if i < n_layers - 1:
            delta = delta * _activate_grad(spec.activation, a)
        weight = arrays[f"layer{i}.weight"]
        grads[f"layer{i}.weight"] = h_in.T @ delta
        grads[f"layer{i}.bias"] = delta.sum(axis=0)
        delta = delta @ weight.T
    return grads, delta


def _flatten(layout: tuple[LayerSlot, ...], grads: Mapping[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[slot.name].ravel() for slot in layout])


def _check_finite(loss: float, grad: np.ndarray) -> None:
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise TrainingDivergenceError(f"non-finite loss or gradient (loss={loss})")


@dataclass(frozen=True, slots=True)
class DenoiserMLP:
    """Time-conditioned MLP predicting either the noise or the clean datum."""

    spec: MLPSpec
    params: ParameterVector
    target: PredictionTarget = PredictionTarget.EPSILON

    @classmethod
    def init(
        cls,
        spec: MLPSpec,
        rng: np.random.Generator,
        target: PredictionTarget = PredictionTarget.EPSILON,
        zero_final: bool = False,
    ) -> Self:
        if spec.input_dim != spec.output_dim:
            raise InvalidConfigurationError("denoiser output must match its input dimension")
        return cls(spec, init_params(spec, rng, zero_final=zero_final), target)

    def with_params(self, values: np.ndarray | ParameterVector) -> DenoiserMLP:
        params = values if isinstance(values, ParameterVector) else self.params.with_values(values)
        return DenoiserMLP(self.spec, params, self.target)

    def forward(self, x: np.ndarray, t: int | np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h0 = _mlp_input(self.spec, np.atleast_2d(x), t)
        out, _ = _mlp_forward(self.spec, self.params.unflatten(), h0)
        return out[0] if single else out


def loss_and_grad(model: DenoiserMLP, params: ParameterVector, batch: DiffusionBatch) -> tuple[float, np.ndarray]:
    """Mean diffusion loss of ``model``'s architecture at ``params`` and its exact gradient."""
    arrays = params.unflatten()
    h0 = _mlp_input(model.spec, batch.xt, batch.t)
    out, cache = _mlp_forward(model.spec, arrays, h0)
    residual = out - regression_target(model.target, batch)
    loss = float(np.mean(residual**2))
    grads, _ = _mlp_backward(model.spec, arrays, cache, 2.0 * residual / residual.size)
    grad = _flatten(params.layout, grads)
    _check_finite(loss, grad)
    return loss, grad


class GradientOracle(Protocol):
    """``(flat parameters, batch, timestep filter) -> (loss, gradient)``; pure."""

    def __call__(
        self, values: np.ndarray, batch: Any, timestep_filter: TimestepFilter | None = None
    ) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True, slots=True)
class DiffusionOracle:
    """Gradient oracle over a denoiser's flat parameters."""

    model: DenoiserMLP
    schedule: NoiseSchedule

    def __call__(
        self, values: np.ndarray, batch: DiffusionBatch, timestep_filter: TimestepFilter | None = None
    ) -> tuple[float, np.ndarray]:
        if timestep_filter is not None:
            batch = timestep_filter.apply(self.schedule, batch)
        return loss_and_grad(self.model, self.model.params.with_values(values), batch)


@dataclass(frozen=True, slots=True)
class AdversarialPair:
    """Generator (latent -> data) and discriminator (data -> logit)."""

    generator: MLPSpec
    discriminator: MLPSpec
    gen_params: ParameterVector
    disc_params: ParameterVector

    @classmethod
    def init(
        cls,
        data_dim: int,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (128, 128),
        latent_dim: int = LATENT_DIM,
        activation: Activation = Activation.SILU,
    ) -> Self:
        gen = MLPSpec(latent_dim, data_dim, hidden, activation, time_embed_dim=0)
        disc = MLPSpec(data_dim, 1, hidden, activation, time_embed_dim=0)
        return cls(gen, disc, init_params(gen, rng), init_params(disc, rng))

    @property
    def latent_dim(self) -> int:
        return self.generator.input_dim

    def with_params(
        self, gen: np.ndarray | None = None, disc: np.ndarray | None = None
    ) -> AdversarialPair:
        return AdversarialPair(
            self.generator,
            self.discriminator,
            self.gen_params if gen is None else self.gen_params.with_values(gen),
            self.disc_params if disc is None else self.disc_params.with_values(disc),
        )


@dataclass(frozen=True, slots=True)
class GanLosses:
    gen_loss: float
    disc_loss: float
    gen_grad: np.ndarray
    disc_grad: np.ndarray


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def gan_losses(pair: AdversarialPair, real: np.ndarray, latent: np.ndarray) -> GanLosses:
    """Non-saturating losses and the gradient of each player's loss w.r.t. its own weights.

    disc: -mean log D(x) - mean log(1 - D(G(z)));  gen: -mean log D(G(z)).
    """
    real = np.asarray(real, dtype=np.float64)
    latent = np.asarray(latent, dtype=np.float64)
    if real.shape[0] == 0 or latent.shape[0] == 0:
        raise ContractViolation("adversarial losses need nonempty batches")

    gen_arrays = pair.gen_params.unflatten()
    disc_arrays = pair.disc_params.unflatten()
    fake, gen_cache = _mlp_forward(pair.generator, gen_arrays, _mlp_input(pair.generator, latent, None))
    real_logits, real_cache = _mlp_forward(pair.discriminator, disc_arrays, _mlp_input(pair.discriminator, real, None))
    fake_logits, fake_cache = _mlp_forward(pair.discriminator, disc_arrays, fake)

    n, m = real.shape[0], latent.shape[0]
    disc_loss = float(np.mean(_softplus(-real_logits)) + np.mean(_softplus(fake_logits)))
    gen_loss = float(np.mean(_softplus(-fake_logits)))

    d_real, _ = _mlp_backward(pair.discriminator, disc_arrays, real_cache, -expit(-real_logits) / n)
    d_fake, _ = _mlp_backward(pair.discriminator, disc_arrays, fake_cache, expit(fake_logits) / m)
    disc_grad = _flatten(pair.disc_params.layout, {k: d_real[k] + d_fake[k] for k in d_real})

    # generator: through the (fixed) discriminator down to the generator output
    _, d_fake_input = _mlp_backward(pair.discriminator, disc_arrays, fake_cache, -expit(-fake_logits) / m)
    g_grads, _ = _mlp_backward(pair.generator, gen_arrays, gen_cache, d_fake_input)
    gen_grad = _flatten(pair.gen_params.layout, g_grads)

    _check_finite(disc_loss, disc_grad)
    _check_finite(gen_loss, gen_grad)
    return GanLosses(gen_loss, disc_loss, gen_grad, disc_grad)


@dataclass(frozen=True, slots=True)
class GeneratorOracle:
    """Gradient oracle over the generator's weights with the discriminator frozen.

    The batch is a latent matrix; timestep filters do not apply.
    """

    pair: AdversarialPair

    def __call__(
        self, values: np.ndarray, batch: np.ndarray, timestep_filter: TimestepFilter | None = None
    ) -> tuple[float, np.ndarray]:
        if timestep_filter is not None:
            raise ContractViolation("timestep filters only apply to diffusion oracles")
        pair = self.pair.with_params(gen=values)
        gen_arrays = pair.gen_params.unflatten()
        disc_arrays = pair.disc_params.unflatten()
        fake, gen_cache = _mlp_forward(pair.generator, gen_arrays, _mlp_input(pair.generator, batch, None))
        logits, fake_cache = _mlp_forward(pair.discriminator, disc_arrays, fake)
        m = batch.shape[0]
        loss = float(np.mean(_softplus(-logits)))
        _, d_fake = _mlp_backward(pair.discriminator, disc_arrays, fake_cache, -expit(-logits) / m)
        grads, _ = _mlp_backward(pair.generator, gen_arrays, gen_cache, d_fake)
        grad = _flatten(pair.gen_params.layout, grads)
        _check_finite(loss, grad)
        return loss, grad
