"""Experiment recipes built on the trainer.

Each recipe trains one or more runs and reduces them to a small report:
the speedup comparison, the consistency runs, the ablation and sweeps, and
the denoiser-versus-generator landscape comparison.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import median
from typing import Any

import numpy as np

from diffaccel import datasets
from diffaccel.checkpoint import Checkpoint
from diffaccel.config import ExperimentConfig
from diffaccel.consistency import (
    ConsistencyReport,
    SampleGrid,
    consistency,
    consistency_all_pairs,
    shared_noise_run,
)
from diffaccel.core.diffusion import DiffusionBatch, NoiseStream, PredictionTarget, generate
from diffaccel.core.models import DenoiserMLP, DiffusionOracle, GeneratorOracle
from diffaccel.errors import InvalidConfigurationError
from diffaccel.landscape import interpolate_1d, lanczos_spectrum
from diffaccel.metrics import MetricsRow
from diffaccel.trainer import train, train_adversarial

logger = logging.getLogger(__name__)

LANDSCAPE_BATCH = 4096
MIN_CONFIDENT_SEEDS = 3
DEFAULT_SHARED_INPUTS = 32

# Everything a speedup comparison is allowed to vary between its two configs.
ACCELERATOR_KEYS: dict[str, frozenset[str] | None] = {
    "clts": None,
    "optimizer": frozenset({"momentum_decay", "lr_compensation", "beta_floor"}),
}

ABLATION_VARIANTS: dict[str, dict[str, bool]] = {
    "baseline": {"clts": False, "momentum_decay": False, "lr_compensation": False},
    "md": {"clts": False, "momentum_decay": True, "lr_compensation": False},
    "md_lrc": {"clts": False, "momentum_decay": True, "lr_compensation": True},
    "md_lrc_clts": {"clts": True, "momentum_decay": True, "lr_compensation": True},
}


def _finite(value: float) -> float | None:
    return value if math.isfinite(value) else None


def landscape_batch(config: ExperimentConfig, size: int = LANDSCAPE_BATCH, seed: int | None = None) -> DiffusionBatch:
    """Fixed evaluation batch with uniform timesteps, seeded independently of training."""
    sched = config.build_schedule()
    train_set, _ = datasets.generate(config.dataset)
    rng = np.random.default_rng(config.run.global_seed if seed is None else seed)
    idx = rng.integers(0, train_set.shape[0], size=size)
    t = rng.integers(0, sched.T, size=size)
    eps = rng.standard_normal((size, train_set.shape[1]))
    return DiffusionBatch.build(sched, train_set[idx], t, eps)


def sample_checkpoint(ckpt: Checkpoint, n: int, seed: int, use_ema: bool = True) -> np.ndarray:
    """Draw ``n`` samples from a checkpoint's EMA (or raw) weights."""
    config = ExperimentConfig.from_dict(ckpt.config)
    sched = config.build_schedule()
    model = DenoiserMLP(ckpt.architecture, ckpt.ema_params if use_ema else ckpt.params, PredictionTarget(ckpt.target))
    stream = NoiseStream.from_seed(seed, n, ckpt.architecture.input_dim, sched.T - 1)
    return generate(model, sched, stream, n)


# -- speedup comparison -------------------------------------------------------


@dataclass(frozen=True, slots=True)
class SpeedupReport:
    """Iterations each run needs to reach the baseline's median final EMA distance.

    Censored runs (threshold never reached) count as infinitely slow.
    """

    threshold: float
    seeds: tuple[int, ...]
    baseline_iterations: tuple[float, ...]
    optimized_iterations: tuple[float, ...]
    ratio: float
    low_confidence: bool
    run_names: tuple[str, str] = ("baseline", "optimized")
    curves: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    @property
    def censored(self) -> dict[str, int]:
        return {
            self.run_names[0]: sum(math.isinf(x) for x in self.baseline_iterations),
            self.run_names[1]: sum(math.isinf(x) for x in self.optimized_iterations),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "speedup",
            "threshold": self.threshold,
            "seeds": list(self.seeds),
            "baseline_iterations": [_finite(x) for x in self.baseline_iterations],
            "optimized_iterations": [_finite(x) for x in self.optimized_iterations],
            "ratio": _finite(self.ratio),
            "low_confidence": self.low_confidence,
            "censored": self.censored,
            "run_names": list(self.run_names),
            "curves": self.curves,
        }


def check_comparable(baseline: ExperimentConfig, optimized: ExperimentConfig) -> None:
    """Raise unless the two configs differ only in accelerator settings."""
    a, b = baseline.to_dict(), optimized.to_dict()
    for section in a:
        if section not in ACCELERATOR_KEYS:
            if a[section] != b[section]:
                raise InvalidConfigurationError(f"compared configs differ outside the accelerators: [{section}]")
            continue
        allowed = ACCELERATOR_KEYS[section]
        if allowed is None:
            continue
        for key in a[section]:
            if key not in allowed and a[section][key] != b[section][key]:
                raise InvalidConfigurationError(f"compared configs differ in {section}.{key}")


def _run_rows(config: ExperimentConfig) -> list[MetricsRow]:
    return train(config).metrics


def _first_hit(rows: Sequence[MetricsRow], threshold: float) -> float:
    for row in rows:
        if row.sw_ema is not None and row.sw_ema <= threshold:
            return float(row.iteration)
    return math.inf


def _median_curve(runs: Sequence[Sequence[MetricsRow]]) -> dict[str, list[float]]:
    iterations = [row.iteration for row in runs[0]]
    values = [median(run[k].sw_ema for run in runs if run[k].sw_ema is not None) for k in range(len(iterations))]
    return {"iteration": [float(i) for i in iterations], "sw_ema": values}


def compare(
    baseline: ExperimentConfig,
    optimized: ExperimentConfig,
    n_seeds: int,
    workers: int = 1,
) -> SpeedupReport:
    """Train both configs on ``n_seeds`` seeds and report the ratio of median iterations-to-threshold."""
    if n_seeds < 1:
        raise InvalidConfigurationError(f"n_seeds must be >= 1, got {n_seeds}")
    check_comparable(baseline, optimized)
    seeds = tuple(baseline.run.global_seed + k for k in range(n_seeds))
    configs = [cfg.with_section("run", global_seed=s) for s in seeds for cfg in (baseline, optimized)]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_rows, configs))
    else:
        results = [_run_rows(cfg) for cfg in configs]
    base_runs, opt_runs = results[0::2], results[1::2]

    finals = [run[-1].sw_ema for run in base_runs if run and run[-1].sw_ema is not None]
    if not finals:
        raise InvalidConfigurationError("baseline runs logged no evaluation rows")
    threshold = float(median(finals))
    base_hits = tuple(_first_hit(run, threshold) for run in base_runs)
    opt_hits = tuple(_first_hit(run, threshold) for run in opt_runs)
    base_median, opt_median = median(base_hits), median(opt_hits)
    ratio = opt_median / base_median if math.isfinite(base_median) else math.nan
    report = SpeedupReport(
        threshold=threshold,
        seeds=seeds,
        baseline_iterations=base_hits,
        optimized_iterations=opt_hits,
        ratio=ratio,
        low_confidence=n_seeds < MIN_CONFIDENT_SEEDS,
        curves={"baseline": _median_curve(base_runs), "optimized": _median_curve(opt_runs)},
    )
    logger.info("Comparison finished", extra={"ratio": ratio, "threshold": threshold, "seeds": n_seeds})
    return report


# -- consistency ---------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ConsistencyRun:
    report: ConsistencyReport
    grid: SampleGrid


def run_consistency(
    config: ExperimentConfig,
    n_models: int,
    M: int = DEFAULT_SHARED_INPUTS,
    init_seeds: Sequence[int] | None = None,
    weights: str = "raw",
    all_pairs: bool = False,
    sampling_seed: int | None = None,
    progress: bool = False,
) -> ConsistencyRun:
    """Train ``n_models`` denoisers that differ only in their init seed and score their agreement."""
    if n_models < 2:
        raise InvalidConfigurationError(f"consistency needs at least 2 models, got {n_models}")
    if weights not in ("raw", "ema"):
        raise InvalidConfigurationError(f"weights must be 'raw' or 'ema', got {weights!r}")
    if init_seeds is None:
        init_seeds = [config.run.global_seed * n_models + i for i in range(n_models)]
    if len(init_seeds) != n_models:
        raise InvalidConfigurationError(f"{len(init_seeds)} init seeds for {n_models} models")

    models: list[DenoiserMLP] = []
    for init_seed in init_seeds:
        result = train(config.with_section("run", init_seed=int(init_seed)), progress=progress)
        models.append(result.ema_model if weights == "ema" else result.model)

    seed = config.run.global_seed if sampling_seed is None else sampling_seed
    tags = [f"{config.model.target}-init{s}" for s in init_seeds]
    grid = shared_noise_run(models, config.build_schedule(), seed, M, tags)
    report = consistency_all_pairs(grid) if all_pairs else consistency(grid)
    logger.info("Consistency measured", extra={"c_value": report.c_value, "target": str(config.model.target)})
    return ConsistencyRun(report, grid)


def consistency_gap(config: ExperimentConfig, n_models: int = 3, M: int = DEFAULT_SHARED_INPUTS) -> float:
    """C of epsilon-prediction models minus C of otherwise identical x0-prediction models."""
    eps = run_consistency(config.with_section("model", target=PredictionTarget.EPSILON), n_models, M)
    x0 = run_consistency(config.with_section("model", target=PredictionTarget.X0), n_models, M)
    return eps.report.c_value - x0.report.c_value


# -- ablation and sweeps -------------------------------------------------------


def _final_sw(config: ExperimentConfig) -> float:
    rows = train(config).metrics
    value = rows[-1].sw_ema if rows else None
    return math.nan if value is None else value


def ablation_config(config: ExperimentConfig, variant: str) -> ExperimentConfig:
    try:
        flags = ABLATION_VARIANTS[variant]
    except KeyError as exc:
        raise InvalidConfigurationError(f"unknown ablation variant {variant!r}") from exc
    return config.with_section("clts", enabled=flags["clts"]).with_section(
        "optimizer", momentum_decay=flags["momentum_decay"], lr_compensation=flags["lr_compensation"]
    )


@dataclass(frozen=True, slots=True)
class AblationReport:
    """Final EMA sliced-Wasserstein per variant, one value per seed."""

    seeds: tuple[int, ...]
    results: dict[str, list[float]]

    def medians(self) -> dict[str, float]:
        return {name: float(np.median(values)) for name, values in self.results.items()}

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "ablation",
            "seeds": list(self.seeds),
            "results": {k: [_finite(v) for v in vals] for k, vals in self.results.items()},
            "medians": {k: _finite(v) for k, v in self.medians().items()},
        }


def run_ablation(
    config: ExperimentConfig, seeds: Sequence[int], variants: Sequence[str] = tuple(ABLATION_VARIANTS)
) -> AblationReport:
    results: dict[str, list[float]] = {}
    for variant in variants:
        cfg = ablation_config(config, variant)
        results[variant] = [_final_sw(cfg.with_section("run", global_seed=s)) for s in seeds]
        logger.info("Ablation variant finished", extra={"variant": variant, "sw_ema": results[variant]})
    return AblationReport(tuple(seeds), results)


@dataclass(frozen=True, slots=True)
class SweepReport:
    key: str
    values: tuple[Any, ...]
    seeds: tuple[int, ...]
    results: tuple[tuple[float, ...], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "sweep",
            "key": self.key,
            "values": list(self.values),
            "seeds": list(self.seeds),
            "results": [[_finite(v) for v in row] for row in self.results],
        }


def sweep(config: ExperimentConfig, key: str, values: Sequence[Any], seeds: Sequence[int]) -> SweepReport:
    """Vary one ``section.key`` over ``values``; e.g. ``clts.mu`` or ``clts.target_iteration``."""
    rows = []
    for value in values:
        cfg = config.with_overrides([f"{key}={json.dumps(value)}"])
        rows.append(tuple(_final_sw(cfg.with_section("run", global_seed=s)) for s in seeds))
    return SweepReport(key, tuple(values), tuple(seeds), tuple(rows))


# -- landscape comparison -------------------------------------------------------


@dataclass(frozen=True, slots=True)
class LandscapeSummary:
    lambda1: float
    var_sigma2: float
    roughness: float

    def to_dict(self) -> dict[str, float]:
        return {"lambda1": self.lambda1, "var_sigma2": self.var_sigma2, "roughness": self.roughness}


@dataclass(frozen=True, slots=True)
class LandscapeComparison:
    seed: int
    iterations: int
    denoiser: LandscapeSummary
    generator: LandscapeSummary

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "landscape_comparison",
            "seed": self.seed,
            "iterations": self.iterations,
            "denoiser": self.denoiser.to_dict(),
            "generator": self.generator.to_dict(),
        }


def landscape_comparison(
    config: ExperimentConfig,
    seed: int,
    lanczos_iterations: int = 30,
    points: int = 41,
    batch_size: int = 1024,
) -> LandscapeComparison:
    """Denoiser and GAN generator trained on the same data for the same number of iterations, probed alike.

    Interpolation anchors are the half-way and final weights of each run.
    """
    total = config.run.total_iterations
    half = max(1, total // 2)
    cfg = config.with_section("run", global_seed=seed, snapshot_iterations=(half, total), eval_every=total)
    alphas = np.linspace(0.0, 1.0, points)

    result = train(cfg)
    model = result.model
    assert model is not None
    batch = landscape_batch(cfg, batch_size, seed)
    oracle = DiffusionOracle(model, cfg.build_schedule())
    theta = model.params.values
    spectrum = lanczos_spectrum(oracle, theta, min(lanczos_iterations, len(theta)), seed, batch)
    curve = interpolate_1d(oracle, result.snapshots[half], theta, alphas, batch)
    denoiser = LandscapeSummary(spectrum.lambda1, spectrum.var_sigma2, curve.roughness())

    gan = train_adversarial(
        cfg.dataset, total, cfg.run.batch_size, seed, hidden=cfg.model.hidden,
        lr=cfg.optimizer.l0, snapshot_iterations=(half, total),
    )
    latent = np.random.default_rng(seed).standard_normal((batch_size, gan.pair.latent_dim))
    g_oracle = GeneratorOracle(gan.pair)
    g_theta = gan.pair.gen_params.values
    g_spectrum = lanczos_spectrum(g_oracle, g_theta, min(lanczos_iterations, len(g_theta)), seed, latent)
    g_curve = interpolate_1d(g_oracle, gan.snapshots[half].gen_params.values, g_theta, alphas, latent)
    generator = LandscapeSummary(g_spectrum.lambda1, g_spectrum.var_sigma2, g_curve.roughness())

    logger.info("Landscape comparison finished",
                extra={"seed": seed, "denoiser_lambda1": denoiser.lambda1, "generator_lambda1": generator.lambda1})
    return LandscapeComparison(seed, total, denoiser, generator)
