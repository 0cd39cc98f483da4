"""
Utility functions for diffaccel: seeded sub-streams and the array codec
used by checkpoints.
"""
from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Any, Self

import numpy as np

from diffaccel.errors import ContractViolation

# Order matters: the n-th child of the root SeedSequence is always the same stream.
STREAM_NAMES = ("init", "data", "timesteps", "noise", "eval")


@dataclass(slots=True)
class SeedStreams:
    """Independent generators derived from one global seed.

    Attributes:
        init: Parameter initialization.
        data: Minibatch index draws.
        timesteps: CLTS timestep draws.
        noise: Forward-process noise draws.
        eval: Evaluation sampling noise and projection seeds.
    """

    init: np.random.Generator
    data: np.random.Generator
    timesteps: np.random.Generator
    noise: np.random.Generator
    eval: np.random.Generator

    @classmethod
    def derive(cls, global_seed: int, init_seed: int | None = None) -> Self:
        """Spawn one child stream per concern from ``global_seed``.

        ``init_seed`` replaces only the initialization stream, so several
        models can share data and noise while differing in their start point.
        """
        children = np.random.SeedSequence(global_seed).spawn(len(STREAM_NAMES))
        generators = {name: np.random.default_rng(child) for name, child in zip(STREAM_NAMES, children)}
        if init_seed is not None:
            generators["init"] = np.random.default_rng(np.random.SeedSequence(init_seed))
        return cls(**generators)

    def get_state(self) -> dict[str, dict[str, Any]]:
        return {name: getattr(self, name).bit_generator.state for name in STREAM_NAMES}

    def set_state(self, state: dict[str, dict[str, Any]]) -> None:
        for name in STREAM_NAMES:
            getattr(self, name).bit_generator.state = state[name]


def encode_array(array: np.ndarray) -> dict[str, Any]:
    """Encode a float array as base64 little-endian float64 plus its shape."""
    data = np.ascontiguousarray(array, dtype="<f8")
    return {
        "shape": list(data.shape),
        "dtype": "<f8",
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def decode_array(payload: dict[str, Any]) -> np.ndarray:
    """Inverse of :func:`encode_array`; always returns native float64."""
    if payload.get("dtype") != "<f8":
        raise ContractViolation(f"unsupported array dtype {payload.get('dtype')!r}")
    raw = base64.b64decode(payload["data"])
    array = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return array.reshape(tuple(payload["shape"]))


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{what}: shape mismatch {a.shape} vs {b.shape}")
