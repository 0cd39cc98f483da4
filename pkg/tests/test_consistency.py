from __future__ import annotations

import math

import numpy as np
import pytest

from diffaccel.consistency import (
    PSNR_CAP_DB,
    SampleGrid,
    consistency,
    consistency_all_pairs,
    psnr,
    shared_noise_run,
    sliced_wasserstein,
)
from diffaccel.core.diffusion import build_schedule
from diffaccel.core.models import DenoiserMLP, MLPSpec
from diffaccel.errors import ContractViolation, InvalidConfigurationError


def tiny_model(seed):
    return DenoiserMLP.init(MLPSpec(2, 2, hidden=(8,), time_embed_dim=4), np.random.default_rng(seed))


def test_psnr_examples():
    a = np.zeros(4)
    assert psnr(a, a) == PSNR_CAP_DB
    assert psnr(a, np.full(4, 0.1), peak=2.0) == pytest.approx(10 * math.log10(400))
    assert psnr(a, np.full(4, 2.0), peak=2.0) == pytest.approx(0.0, abs=1e-12)


def test_psnr_errors():
    with pytest.raises(ContractViolation):
        psnr(np.zeros(2), np.zeros(3))
    with pytest.raises(InvalidConfigurationError):
        psnr(np.zeros(2), np.ones(2), peak=0.0)


def test_psnr_and_consistency_match_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, m, d = int(rng.integers(2, 5)), int(rng.integers(1, 4)), 2
        q = rng.uniform(-1, 1, (n, m, d))
        peak = float(rng.uniform(0.5, 4.0))
        total = 0.0
        for j in range(m):
            row = 0.0
            for i in range(1, n):
                mse = sum((q[0, j, k] - q[i, j, k]) ** 2 for k in range(d)) / d
                row += 10 * math.log10(peak * peak / mse)
            total += row / (n - 1)
        expected = total / m
        report = consistency(SampleGrid(q, tuple(f"m{i}" for i in range(n)), 0), peak)
        assert report.c_value == pytest.approx(expected, rel=1e-10)
        assert psnr(q[0, 0], q[1, 0], peak) == pytest.approx(report.pairwise[0, 0], rel=1e-12)


def test_consistency_hand_example():
    q = np.zeros((3, 1, 2))
    q[1, 0] = 0.2  # MSE 0.04 -> 20 dB
    q[2, 0] = math.sqrt(0.004)  # MSE 0.004 -> 30 dB
    report = consistency(SampleGrid(q, ("ref", "a", "b"), 0))
    assert report.c_value == pytest.approx(25.0)
    assert report.pairwise.shape == (1, 2)


def test_consistency_ignores_order_of_non_reference_models():
    q = np.random.default_rng(1).uniform(-1, 1, (4, 5, 2))
    permuted = q[[0, 3, 1, 2]]
    a = consistency(SampleGrid(q, tuple("abcd"), 0)).c_value
    b = consistency(SampleGrid(permuted, tuple("adbc"), 0)).c_value
    assert a == pytest.approx(b, rel=1e-12)


def test_identical_models_hit_the_cap():
    q = np.tile(np.random.default_rng(2).uniform(-1, 1, (1, 3, 2)), (2, 1, 1))
    grid = SampleGrid(q, ("a", "b"), 0)
    assert consistency(grid).c_value == PSNR_CAP_DB
    assert consistency_all_pairs(grid).c_value == PSNR_CAP_DB


def test_all_pairs_variant():
    q = np.zeros((3, 1, 2))
    q[1, 0] = 0.2
    q[2, 0] = 0.2
    report = consistency_all_pairs(SampleGrid(q, ("a", "b", "c"), 0))
    # pairs (a,b) and (a,c) at 20 dB, (b,c) identical
    assert report.c_value == pytest.approx((20.0 + 20.0 + 100.0) / 3)
    assert report.variant == "all_pairs"


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(3)
    a = rng.uniform(-1, 1, 1000)
    values = [np.mean([psnr(a, a + s * rng.standard_normal(1000)) for _ in range(20)]) for s in (0.01, 0.05, 0.2)]
    assert values[0] > values[1] > values[2]


def test_grid_validation():
    with pytest.raises(InvalidConfigurationError):
        SampleGrid(np.zeros((1, 3, 2)), ("a",), 0)
    with pytest.raises(ContractViolation):
        SampleGrid(np.zeros((2, 3)), ("a", "b"), 0)
    with pytest.raises(ContractViolation):
        SampleGrid(np.zeros((2, 3, 2)), ("a",), 0)


def test_shared_noise_run():
    sched = build_schedule("cosine", 10)
    model = tiny_model(0)
    grid = shared_noise_run([model, model, tiny_model(1)], sched, seed=4, M=6)
    assert grid.q.shape == (3, 6, 2)
    np.testing.assert_array_equal(grid.q[0], grid.q[1])
    assert not np.array_equal(grid.q[0], grid.q[2])
    again = shared_noise_run([model, model, tiny_model(1)], sched, seed=4, M=6)
    np.testing.assert_array_equal(grid.q, again.q)


def test_shared_noise_run_rejects_mixed_dimensions():
    sched = build_schedule("cosine", 10)
    other = DenoiserMLP.init(MLPSpec(3, 3, hidden=(4,), time_embed_dim=2), np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        shared_noise_run([tiny_model(0), other], sched, seed=0, M=2)


def test_sample_grid_files(tmp_path):
    q = np.random.default_rng(5).standard_normal((2, 3, 2))
    SampleGrid(q, ("a", "b"), 9).save(tmp_path / "grid.json")
    loaded = SampleGrid.load(tmp_path / "grid.json")
    np.testing.assert_array_equal(loaded.q, q)
    assert loaded.model_tags == ("a", "b")
    assert loaded.seed == 9


def test_sliced_wasserstein():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((200, 2))
    b = rng.standard_normal((150, 2)) + 1.0
    assert sliced_wasserstein(a, a, 16, seed=0) == 0.0
    assert sliced_wasserstein(a, b, 16, seed=3) == pytest.approx(sliced_wasserstein(b, a, 16, seed=3))
    assert sliced_wasserstein(np.zeros((1, 1)), np.ones((1, 1)), 1, seed=0) == pytest.approx(1.0)
    assert sliced_wasserstein(np.zeros(4), np.ones(4), 8, seed=0) == pytest.approx(1.0)
    assert sliced_wasserstein(np.array([0.0, 1.0]), np.array([0.0, 3.0]), 4, seed=1) == pytest.approx(1.0)
    with pytest.raises(ContractViolation):
        sliced_wasserstein(a, np.zeros((3, 3)))
    with pytest.raises(ContractViolation):
        sliced_wasserstein(np.zeros((0, 2)), a)
    with pytest.raises(ContractViolation):
        sliced_wasserstein(np.zeros((2, 2, 2)), a)
