from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
import pytest

from diffaccel.config import ExperimentConfig

TINY = {
    "dataset": {"kind": "ring8", "n_train": 256, "n_eval": 64, "seed": 0},
    "schedule": {"kind": "cosine", "T": 20},
    "model": {"hidden": [16, 16], "time_embed_dim": 4},
    "clts": {"enabled": True},
    "optimizer": {"l0": 1e-3, "ema_rate": 0.9},
    "run": {
        "total_iterations": 40,
        "batch_size": 16,
        "eval_every": 10,
        "checkpoint_every": 0,
        "global_seed": 0,
        "eval_samples": 32,
        "n_projections": 8,
    },
}


class QuadraticOracle:
    """L(theta) = 0.5 theta^T diag(a) theta + c . theta; the batch is ignored."""

    def __init__(self, diag, linear=None):
        self.diag = np.asarray(diag, dtype=np.float64)
        self.linear = np.zeros_like(self.diag) if linear is None else np.asarray(linear, dtype=np.float64)

    def __call__(self, values, batch=None, timestep_filter=None):
        values = np.asarray(values, dtype=np.float64)
        loss = 0.5 * float(values @ (self.diag * values)) + float(self.linear @ values)
        return loss, self.diag * values + self.linear


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return ExperimentConfig.from_dict(copy.deepcopy(TINY))


@pytest.fixture
def tiny_config_file(tmp_path) -> Path:
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY), encoding="utf-8")
    return path


@pytest.fixture
def quadratic():
    return QuadraticOracle
