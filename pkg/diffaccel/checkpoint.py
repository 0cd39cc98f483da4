"""Checkpoint files: a JSON document with base64 little-endian float64 arrays."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Self

import numpy as np

from diffaccel.core.mdlrc import OptimizerState
from diffaccel.core.models import LayerSlot, MLPSpec, ParameterVector
from diffaccel.errors import ArtifactParseError
from diffaccel.utils import decode_array, encode_array

CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True, slots=True)
class Checkpoint:
    """Everything needed to resume a run bitwise.

    Attributes:
        config: Echo of the experiment config (``ExperimentConfig.to_dict``).
        iteration: Number of completed optimizer steps.
        params: Raw parameters.
        state: Optimizer state, including the EMA shadow.
        architecture: MLP descriptor of the denoiser.
        target: Prediction target name.
        rng_state: Bit-generator state of every seed sub-stream.
        loss_window: Running (sum, count) of training losses since the last metrics row.
    """

    config: dict[str, Any]
    iteration: int
    params: ParameterVector
    state: OptimizerState
    architecture: MLPSpec
    target: str
    rng_state: dict[str, Any] = field(default_factory=dict)
    loss_window: tuple[float, int] = (0.0, 0)
    schema_version: int = CHECKPOINT_SCHEMA

    @property
    def ema_params(self) -> ParameterVector:
        return self.params.with_values(self.state.ema_params)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "iteration": self.iteration,
            "architecture": self.architecture.to_dict(),
            "target": self.target,
            "layout": self.params.layout_dict(),
            "params": encode_array(self.params.values),
            "optimizer": {
                **self.state.to_dict(),
                "m": encode_array(self.state.m),
                "v": encode_array(self.state.v),
            },
            "ema_params": encode_array(self.state.ema_params),
            "rng_state": self.rng_state,
            "loss_window": list(self.loss_window),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], path: Path | None = None) -> Self:
        try:
            if data["schema_version"] != CHECKPOINT_SCHEMA:
                raise ArtifactParseError(
                    f"unsupported checkpoint schema {data['schema_version']}", path, field="schema_version"
                )
            layout: tuple[LayerSlot, ...] = ParameterVector.layout_from_dict(data["layout"])
            params = ParameterVector(decode_array(data["params"]), layout)
            opt = data["optimizer"]
            state = OptimizerState(
                m=decode_array(opt["m"]),
                v=decode_array(opt["v"]),
                step=int(opt["step"]),
                beta1_product=float(opt["beta1_product"]),
                current_beta1=float(opt["current_beta1"]),
                current_lr=float(opt["current_lr"]),
                ema_params=decode_array(data["ema_params"]),
            )
            loss_sum, loss_count = data.get("loss_window", [0.0, 0])
            return cls(
                config=data["config"],
                iteration=int(data["iteration"]),
                params=params,
                state=state,
                architecture=MLPSpec.from_dict(data["architecture"]),
                target=str(data["target"]),
                rng_state=data.get("rng_state", {}),
                loss_window=(float(loss_sum), int(loss_count)),
            )
        except ArtifactParseError:
            raise
        except KeyError as exc:
            raise ArtifactParseError("missing checkpoint field", path, field=str(exc.args[0])) from exc
        except (ValueError, TypeError) as exc:
            raise ArtifactParseError(f"malformed checkpoint: {exc}", path) from exc

    def save(self, path: Path) -> Path:
        """Write atomically (temp file then rename)."""
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path: Path) -> Self:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ArtifactParseError(exc.msg, path, line=exc.lineno) from exc
        return cls.from_dict(data, path)


def same_weights(a: Checkpoint, b: Checkpoint) -> bool:
    """Bitwise equality of raw, EMA and moment arrays."""
    return all(
        np.array_equal(x, y)
        for x, y in (
            (a.params.values, b.params.values),
            (a.state.ema_params, b.state.ema_params),
            (a.state.m, b.state.m),
            (a.state.v, b.state.v),
        )
    )
