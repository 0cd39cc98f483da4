from __future__ import annotations

import math

import numpy as np
import pytest

from diffaccel.core.clts import (
    CltsConfig,
    CltsVariant,
    TimestepCurriculum,
    TimestepDistribution,
    gamma_at,
    gaussian_dist,
    mix,
    sample_timesteps,
    uniform_dist,
)
from diffaccel.errors import ContractViolation, InvalidConfigurationError


def close(a, b, rel=1e-10):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def test_gamma_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        target = int(rng.integers(1, 10_000))
        it = int(rng.integers(0, 20_000))
        expected = it / target if it < target else 1.0
        assert close(gamma_at(it, target), expected)


def test_gaussian_and_mix_match_scalar_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        T = int(rng.integers(2, 200))
        mu = float(rng.uniform(0, T))
        sigma = float(rng.uniform(T / 4, 2 * T))
        gamma = float(rng.uniform(0, 1))
        cfg = CltsConfig(T, mu, sigma, target_iteration=10)
        weights = [math.exp(-((t - mu) ** 2) / (2 * sigma * sigma)) for t in range(T)]
        total = sum(weights)
        expected_n = [w / total for w in weights]
        got_n = gaussian_dist(cfg).probs
        got_mix = mix(uniform_dist(T), gaussian_dist(cfg), gamma).probs
        for t in range(T):
            assert close(got_n[t], expected_n[t])
            assert close(got_mix[t], (1 - gamma) / T + gamma * expected_n[t])


def test_defaults_for_horizon():
    cfg = CltsConfig.for_horizon(1000, 5000)
    assert cfg.mu == pytest.approx(300.0)
    assert cfg.sigma == 1000.0
    assert cfg.variant is CltsVariant.MIXED


@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0])
def test_sampling_law(gamma):
    cfg = CltsConfig(1000, 300.0, 1000.0, target_iteration=100)
    dist = mix(uniform_dist(1000), gaussian_dist(cfg), gamma)
    draws = sample_timesteps(dist, np.random.default_rng(42), 1_000_000)
    assert draws.min() >= 0 and draws.max() <= 999
    # 50-step bins keep the sampling error of the TV estimate well below the bound
    counts = np.bincount(draws // 50, minlength=20) / draws.size
    expected = dist.probs.reshape(20, 50).sum(axis=1)
    assert 0.5 * np.abs(counts - expected).sum() < 0.005


def test_zero_probability_timesteps_are_never_drawn():
    dist = TimestepDistribution(np.array([0.0, 0.0, 0.5, 0.5]))
    draws = sample_timesteps(dist, np.random.default_rng(0), 10_000)
    assert set(np.unique(draws)) == {2, 3}


def test_point_mass():
    probs = np.zeros(10)
    probs[7] = 1.0
    draws = sample_timesteps(TimestepDistribution(probs), np.random.default_rng(0), 100)
    assert np.all(draws == 7)


def test_distribution_validation():
    with pytest.raises(ContractViolation):
        TimestepDistribution(np.array([0.5, 0.6]))
    with pytest.raises(ContractViolation):
        TimestepDistribution(np.array([1.5, -0.5]))
    with pytest.raises(ContractViolation):
        mix(uniform_dist(4), uniform_dist(4), 1.5)
    with pytest.raises(ContractViolation):
        mix(uniform_dist(4), uniform_dist(5), 0.5)


def test_config_validation():
    with pytest.raises(InvalidConfigurationError):
        CltsConfig(1, 0.0, 1.0, 10)
    with pytest.raises(InvalidConfigurationError):
        CltsConfig(10, 3.0, 0.0, 10)
    with pytest.raises(InvalidConfigurationError):
        gamma_at(5, 0)


def test_gamma_endpoints_reproduce_components():
    cfg = CltsConfig(100, 30.0, 100.0, target_iteration=50)
    u, n = uniform_dist(100), gaussian_dist(cfg)
    np.testing.assert_array_equal(mix(u, n, 0.0).probs, u.probs)
    np.testing.assert_allclose(mix(u, n, 1.0).probs, n.probs, rtol=1e-15)


def test_curriculum_ramp():
    cfg = CltsConfig(100, 30.0, 100.0, target_iteration=50)
    curriculum = TimestepCurriculum(cfg)
    assert curriculum.gamma(0) == 0.0
    assert curriculum.gamma(25) == 0.5
    assert curriculum.gamma(500) == 1.0
    np.testing.assert_allclose(curriculum.distribution_at(0).probs, 0.01)

    disabled = TimestepCurriculum(cfg, enabled=False)
    assert disabled.gamma(500) == 0.0
    np.testing.assert_array_equal(disabled.distribution_at(500).probs, uniform_dist(100).probs)


def test_shifted_variant_moves_its_mode():
    cfg = CltsConfig(100, 30.0, 10.0, target_iteration=50, variant=CltsVariant.SHIFTED)
    curriculum = TimestepCurriculum(cfg)
    assert int(np.argmax(curriculum.distribution_at(0).probs)) == 99
    assert int(np.argmax(curriculum.distribution_at(50).probs)) == 30
    # gamma = 0.2: mean 0.8 * 99 + 0.2 * 30 = 85.2
    assert int(np.argmax(curriculum.distribution_at(10).probs)) == 85


def test_uniform_over_4000_steps():
    dist = uniform_dist(4000)
    np.testing.assert_allclose(dist.probs, 2.5e-4, rtol=1e-12)
    assert dist.probs.sum() == pytest.approx(1.0)


def test_curriculum_moves_mass_toward_the_gaussian_mode():
    T = 1000
    cfg = CltsConfig.for_horizon(T, 100)
    u, n = uniform_dist(T), gaussian_dist(cfg)
    mode = int(np.argmax(n.probs))
    assert mode == 300
    table = np.stack([mix(u, n, g).probs for g in np.linspace(0.0, 1.0, 21)])
    assert np.all(np.diff(table[:, mode]) >= 0)
    losing = u.probs > n.probs
    assert losing[T - 1]
    assert np.all(np.diff(table[:, losing], axis=0) <= 0)
    assert table[-1, T - 1] < table[0, T - 1]
