"""Training loop for the toy denoisers, plus the fixed-momentum adversarial baseline."""

from __future__ import annotations

import logging
import time
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from diffaccel import datasets
from diffaccel.checkpoint import Checkpoint
from diffaccel.config import ExperimentConfig
from diffaccel.consistency import sliced_wasserstein
from diffaccel.core.clts import TimestepCurriculum
from diffaccel.core.diffusion import DiffusionBatch, NoiseStream, generate
from diffaccel.core.mdlrc import MdlrcConfig, OptimizerState, ema_update, step
from diffaccel.core.models import AdversarialPair, DenoiserMLP, DiffusionOracle, ParameterVector, gan_losses
from diffaccel.datasets import DatasetSpec
from diffaccel.errors import InvalidConfigurationError, TrainingDivergenceError
from diffaccel.metrics import MetricsLog, MetricsRow, read_metrics
from diffaccel.utils import SeedStreams

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
LAST_GOOD_FILE = "last_good.json"
FINAL_FILE = "final.json"


@dataclass(slots=True)
class TrainResult:
    """Outcome of one training run.

    Attributes:
        checkpoint: State after the last completed iteration.
        metrics: Every metrics row of the run, earlier segments included on resume.
        snapshots: Raw parameters at the requested snapshot iterations.
        model: Denoiser carrying the final raw parameters.
    """

    checkpoint: Checkpoint
    metrics: list[MetricsRow]
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    model: DenoiserMLP | None = None

    @property
    def ema_model(self) -> DenoiserMLP:
        assert self.model is not None
        return self.model.with_params(self.checkpoint.state.ema_params)

    def first_iteration_below(self, threshold: float, use_ema: bool = False) -> int | None:
        """Earliest metrics row whose sliced Wasserstein distance is at or below ``threshold``."""
        for row in self.metrics:
            value = row.sw_ema if use_ema else row.sw_raw
            if value is not None and value <= threshold:
                return row.iteration
        return None


class Trainer:
    """Runs the diffusion training loop for one :class:`ExperimentConfig`."""

    def __init__(self, config: ExperimentConfig, out_dir: Path | None = None, progress: bool = False) -> None:
        self.config = config.validate()
        self.out_dir = out_dir
        self.progress = progress

        run = config.run
        self.schedule = config.build_schedule()
        self.curriculum = TimestepCurriculum(config.clts_config(), enabled=config.clts.enabled)
        self.opt_cfg = config.mdlrc_config()
        self.train_set, self.eval_set = datasets.generate(config.dataset)
        self.streams = SeedStreams.derive(run.global_seed, run.init_seed)

        spec = config.model.mlp_spec(self.train_set.shape[1])
        self.model = DenoiserMLP.init(spec, self.streams.init, config.model.target)
        self.oracle = DiffusionOracle(self.model, self.schedule)

        # Drawn before any training draw, so a resumed run derives the same values.
        self._eval_noise_seed = int(self.streams.eval.integers(2**63 - 1))
        self._projection_seed = int(self.streams.eval.integers(2**63 - 1))
        self._eval_stream: NoiseStream | None = None

    def evaluate(self, values: np.ndarray) -> float:
        """Sliced Wasserstein distance between fresh samples and the held-out set."""
        if self._eval_stream is None:
            self._eval_stream = NoiseStream.from_seed(
                self._eval_noise_seed, self.config.run.eval_samples, self.model.spec.input_dim, self.schedule.T - 1
            )
        samples = generate(self.model.with_params(values), self.schedule, self._eval_stream.replay(),
                           self.config.run.eval_samples)
        return sliced_wasserstein(samples, self.eval_set, self.config.run.n_projections, self._projection_seed)

    def _checkpoint(self, iteration: int, params: ParameterVector, state: OptimizerState,
                    loss_window: tuple[float, int]) -> Checkpoint:
        return Checkpoint(
            config=self.config.to_dict(),
            iteration=iteration,
            params=params,
            state=state,
            architecture=self.model.spec,
            target=str(self.model.target),
            rng_state=self.streams.get_state(),
            loss_window=loss_window,
        )

    def _restore(self, resume: Checkpoint) -> None:
        if resume.architecture != self.model.spec:
            raise InvalidConfigurationError("checkpoint architecture does not match the config")
        if resume.config != self.config.to_dict():
            logger.warning("Resuming under a config that differs from the checkpoint's echo")
        self.streams.set_state(resume.rng_state)

    def _metrics_log(self, resume: Checkpoint | None) -> MetricsLog:
        if self.out_dir is None:
            return MetricsLog()
        path = self.out_dir / METRICS_FILE
        if resume is not None and path.exists():
            log = MetricsLog(path, read_metrics(path))
            log.truncate_after(resume.iteration)
            return log
        return MetricsLog(path)

    def run(self, resume: Checkpoint | None = None, stop_at: int | None = None) -> TrainResult:
        """Train up to ``stop_at`` (default: the configured total) and return the final state."""
        run = self.config.run
        total = run.total_iterations
        stop = total if stop_at is None else min(stop_at, total)

        if resume is None:
            params = self.model.params
            state = OptimizerState.init(params.values, self.opt_cfg)
            start, loss_sum, loss_count = 0, 0.0, 0
        else:
            self._restore(resume)
            params, state = resume.params, resume.state
            start = resume.iteration
            loss_sum, loss_count = resume.loss_window

        log = self._metrics_log(resume)
        snapshots: dict[int, np.ndarray] = {}
        wanted = set(run.snapshot_iterations)
        started = time.perf_counter()
        logger.info(
            "Training started",
            extra={"start": start, "stop": stop, "clts": self.config.clts.enabled,
                   "momentum_decay": self.opt_cfg.momentum_decay, "seed": run.global_seed},
        )

        last_good = self._checkpoint(start, params, state, (loss_sum, loss_count))
        bar = tqdm(range(start, stop), total=stop, initial=start, disable=not self.progress,
                   desc="train", leave=False)
        for it in bar:
            idx = self.streams.data.integers(0, self.train_set.shape[0], size=run.batch_size)
            t = self.curriculum.sample(it, self.streams.timesteps, run.batch_size)
            eps = self.streams.noise.standard_normal((run.batch_size, self.train_set.shape[1]))
            batch = DiffusionBatch.build(self.schedule, self.train_set[idx], t, eps)
            try:
                loss, grad = self.oracle(params.values, batch)
                values, state = step(state, params.values, grad, self.opt_cfg)
            except TrainingDivergenceError as exc:
                exc.iteration = it + 1
                if self.out_dir is not None:
                    exc.checkpoint_path = last_good.save(self.out_dir / LAST_GOOD_FILE)
                logger.error("Training diverged", extra={"iteration": it + 1, "last_good": last_good.iteration})
                raise
            state = ema_update(state, values, self.opt_cfg)
            params = params.with_values(values)
            loss_sum += loss
            loss_count += 1
            done = it + 1

            if done in wanted:
                snapshots[done] = values.copy()

            if done % run.eval_every == 0 or done == total:
                row = MetricsRow(
                    iteration=done,
                    train_loss=loss_sum / loss_count,
                    sw_raw=self.evaluate(params.values),
                    sw_ema=self.evaluate(state.ema_params),
                    beta1=state.current_beta1,
                    lr=state.current_lr,
                    gamma=self.curriculum.gamma(it),
                    wall_clock=time.perf_counter() - started,
                )
                log.append(row)
                loss_sum, loss_count = 0.0, 0
                bar.set_postfix(loss=f"{row.train_loss:.4f}", sw=f"{row.sw_raw:.4f}")
                logger.info("Metrics", extra=row.to_dict())

            if run.checkpoint_every and done % run.checkpoint_every == 0:
                last_good = self._checkpoint(done, params, state, (loss_sum, loss_count))
                if self.out_dir is not None:
                    last_good.save(self.out_dir / f"ckpt_{done:07d}.json")
        bar.close()

        final = self._checkpoint(stop, params, state, (loss_sum, loss_count))
        if self.out_dir is not None:
            final.save(self.out_dir / FINAL_FILE)
        logger.info("Training finished", extra={"iteration": stop, "seconds": time.perf_counter() - started})
        return TrainResult(final, list(log.rows), snapshots, self.model.with_params(params))


def train(
    config: ExperimentConfig,
    out_dir: Path | None = None,
    resume: Checkpoint | None = None,
    progress: bool = False,
    stop_at: int | None = None,
) -> TrainResult:
    return Trainer(config, out_dir, progress).run(resume=resume, stop_at=stop_at)


@dataclass(slots=True)
class AdversarialResult:
    pair: AdversarialPair
    snapshots: dict[int, AdversarialPair] = field(default_factory=dict)
    gen_losses: list[float] = field(default_factory=list)


def train_adversarial(
    dataset: DatasetSpec,
    iterations: int,
    batch_size: int = 128,
    seed: int = 0,
    hidden: tuple[int, ...] = (128, 128),
    lr: float = 1e-4,
    beta1: float = 0.5,
    snapshot_iterations: Iterable[int] = (),
    progress: bool = False,
) -> AdversarialResult:
    """Simultaneous fixed-momentum Adam on both players of a non-saturating GAN."""
    if iterations < 1:
        raise InvalidConfigurationError(f"iterations must be >= 1, got {iterations}")
    train_set, _ = datasets.generate(dataset)
    streams = SeedStreams.derive(seed)
    pair = AdversarialPair.init(train_set.shape[1], streams.init, hidden=hidden)
    cfg = MdlrcConfig(beta0=beta1, l0=lr, beta_floor=0.0, ema_rate=0.0,
                      momentum_decay=False, lr_compensation=False)
    gen_state = OptimizerState.init(pair.gen_params.values, cfg)
    disc_state = OptimizerState.init(pair.disc_params.values, cfg)
    wanted = set(snapshot_iterations)
    result = AdversarialResult(pair)

    for it in tqdm(range(iterations), disable=not progress, desc="gan", leave=False):
        real = train_set[streams.data.integers(0, train_set.shape[0], size=batch_size)]
        latent = streams.noise.standard_normal((batch_size, pair.latent_dim))
        losses = gan_losses(pair, real, latent)
        gen_values, gen_state = step(gen_state, pair.gen_params.values, losses.gen_grad, cfg)
        disc_values, disc_state = step(disc_state, pair.disc_params.values, losses.disc_grad, cfg)
        pair = pair.with_params(gen=gen_values, disc=disc_values)
        result.gen_losses.append(losses.gen_loss)
        if it + 1 in wanted:
            result.snapshots[it + 1] = pair

    result.pair = pair
    logger.info("Adversarial training finished", extra={"iterations": iterations, "gen_loss": result.gen_losses[-1]})
    return result
