from __future__ import annotations

import json
import math

import numpy as np
import pytest

from diffaccel.checkpoint import Checkpoint
from diffaccel.consistency import PSNR_CAP_DB
from diffaccel.errors import InvalidConfigurationError
from diffaccel.experiments import (
    ABLATION_VARIANTS,
    SpeedupReport,
    ablation_config,
    check_comparable,
    compare,
    consistency_gap,
    landscape_batch,
    landscape_comparison,
    run_ablation,
    run_consistency,
    sample_checkpoint,
    sweep,
)
from diffaccel.trainer import train


def test_check_comparable(tiny_config):
    optimized = tiny_config.with_section("clts", enabled=False, variant="shifted").with_section(
        "optimizer", momentum_decay=False, beta_floor=0.1
    )
    check_comparable(tiny_config, optimized)
    with pytest.raises(InvalidConfigurationError):
        check_comparable(tiny_config, tiny_config.with_section("optimizer", l0=1e-2))
    with pytest.raises(InvalidConfigurationError):
        check_comparable(tiny_config, tiny_config.with_section("run", batch_size=8))


def test_compare_identical_configs(tiny_config):
    report = compare(tiny_config, tiny_config, n_seeds=1)
    assert report.ratio == 1.0
    assert report.low_confidence
    assert report.baseline_iterations == report.optimized_iterations
    assert report.censored == {"baseline": 0, "optimized": 0}
    assert report.curves["baseline"]["iteration"] == [10.0, 20.0, 30.0, 40.0]
    data = json.loads(json.dumps(report.to_dict()))
    assert data["kind"] == "speedup"
    assert data["ratio"] == 1.0


def test_compare_rejects_bad_input(tiny_config):
    with pytest.raises(InvalidConfigurationError):
        compare(tiny_config, tiny_config, n_seeds=0)
    with pytest.raises(InvalidConfigurationError):
        compare(tiny_config, tiny_config.with_section("model", hidden=(4,)), n_seeds=1)


def test_censored_runs_serialize_as_null():
    report = SpeedupReport(0.1, (0, 1), (10.0, 20.0), (math.inf, 10.0), math.inf, True)
    data = report.to_dict()
    assert data["optimized_iterations"] == [None, 10.0]
    assert data["ratio"] is None
    assert data["censored"] == {"baseline": 0, "optimized": 1}


def test_consistency_of_identical_runs_is_capped(tiny_config):
    run = run_consistency(tiny_config, n_models=2, M=4, init_seeds=[5, 5])
    assert run.report.c_value == PSNR_CAP_DB
    assert run.grid.q.shape == (2, 4, 2)
    assert run.grid.model_tags == ("epsilon-init5", "epsilon-init5")


def test_consistency_of_different_inits(tiny_config):
    run = run_consistency(tiny_config, n_models=3, M=4, all_pairs=True, weights="ema")
    assert math.isfinite(run.report.c_value)
    assert run.report.c_value < PSNR_CAP_DB
    assert run.report.variant == "all_pairs"


def test_consistency_validation(tiny_config):
    with pytest.raises(InvalidConfigurationError):
        run_consistency(tiny_config, n_models=1)
    with pytest.raises(InvalidConfigurationError):
        run_consistency(tiny_config, n_models=2, weights="best")
    with pytest.raises(InvalidConfigurationError):
        run_consistency(tiny_config, n_models=2, init_seeds=[1, 2, 3])


def test_consistency_gap_is_finite(tiny_config):
    assert math.isfinite(consistency_gap(tiny_config, n_models=2, M=4))


def test_ablation_configs(tiny_config):
    for name, flags in ABLATION_VARIANTS.items():
        config = ablation_config(tiny_config, name)
        assert config.clts.enabled is flags["clts"]
        assert config.optimizer.momentum_decay is flags["momentum_decay"]
        assert config.optimizer.lr_compensation is flags["lr_compensation"]
    with pytest.raises(InvalidConfigurationError):
        ablation_config(tiny_config, "everything")


def test_run_ablation(tiny_config):
    report = run_ablation(tiny_config, seeds=[0, 1], variants=("baseline", "md_lrc_clts"))
    assert set(report.results) == {"baseline", "md_lrc_clts"}
    assert all(len(v) == 2 and all(x >= 0 for x in v) for v in report.results.values())
    assert report.to_dict()["kind"] == "ablation"


def test_sweep(tiny_config):
    report = sweep(tiny_config, "clts.mu", [2.0, 15.0], seeds=[0])
    assert len(report.results) == 2
    assert all(len(row) == 1 for row in report.results)
    assert report.to_dict()["values"] == [2.0, 15.0]


def test_landscape_batch_is_fixed(tiny_config):
    a = landscape_batch(tiny_config, size=64)
    b = landscape_batch(tiny_config, size=64)
    np.testing.assert_array_equal(a.xt, b.xt)
    np.testing.assert_array_equal(a.t, b.t)
    assert a.t.min() >= 0 and a.t.max() < tiny_config.schedule.T
    assert not np.array_equal(a.xt, landscape_batch(tiny_config, size=64, seed=1).xt)


def test_sample_checkpoint(tiny_config, tmp_path):
    train(tiny_config, tmp_path)
    ckpt = Checkpoint.load(tmp_path / "final.json")
    samples = sample_checkpoint(ckpt, 16, seed=3)
    assert samples.shape == (16, 2)
    np.testing.assert_array_equal(samples, sample_checkpoint(ckpt, 16, seed=3))
    assert not np.array_equal(samples, sample_checkpoint(ckpt, 16, seed=3, use_ema=False))


def test_landscape_comparison(tiny_config):
    result = landscape_comparison(tiny_config, seed=0, lanczos_iterations=5, points=5, batch_size=64)
    for summary in (result.denoiser, result.generator):
        assert math.isfinite(summary.lambda1)
        assert summary.var_sigma2 >= 0
        assert summary.roughness >= 0
    assert result.to_dict()["kind"] == "landscape_comparison"
