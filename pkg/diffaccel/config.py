"""Configuration management for diffaccel experiments."""

from __future__ import annotations

import json
import numbers
import tomllib
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Self

from diffaccel.core.clts import CltsConfig, CltsVariant
from diffaccel.core.diffusion import PredictionTarget, ScheduleKind, build_schedule, NoiseSchedule
from diffaccel.core.mdlrc import MdlrcConfig
from diffaccel.core.models import Activation, MLPSpec
from diffaccel.datasets import DatasetSpec
from diffaccel.errors import InvalidConfigurationError

SCHEMA_VERSION = 1
DATA_DIM = 2
TARGET_FRACTION = 0.25


def _check(section: str, obj: Any, kinds: Mapping[str, type], optional: Iterable[str] = ()) -> None:
    """Reject values of the wrong type and normalize numbers to the declared one."""
    nullable = set(optional)
    for name, kind in kinds.items():
        value = getattr(obj, name)
        if value is None and name in nullable:
            continue
        if kind is bool:
            ok = isinstance(value, bool)
        elif kind is int:
            ok = isinstance(value, numbers.Integral) and not isinstance(value, bool)
        else:
            ok = isinstance(value, numbers.Real) and not isinstance(value, bool)
        if not ok:
            raise InvalidConfigurationError(f"{section}.{name} must be {kind.__name__}, got {value!r}")
        if kind is not bool:
            object.__setattr__(obj, name, kind(value))


@dataclass(frozen=True, slots=True)
class ScheduleSection:
    kind: ScheduleKind = ScheduleKind.COSINE
    T: int = 1000

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", ScheduleKind(self.kind))
        except ValueError as exc:
            raise InvalidConfigurationError(f"unknown schedule kind {self.kind!r}") from exc
        _check("schedule", self, {"T": int})
        if self.T < 2:
            raise InvalidConfigurationError(f"schedule.T must be >= 2, got {self.T}")


@dataclass(frozen=True, slots=True)
class ModelSection:
    """Architecture descriptor plus the prediction target."""

    hidden: tuple[int, ...] = (128, 128, 128)
    activation: Activation = Activation.SILU
    time_embed_dim: int = 32
    target: PredictionTarget = PredictionTarget.EPSILON

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
            object.__setattr__(self, "activation", Activation(self.activation))
            object.__setattr__(self, "target", PredictionTarget(self.target))
        except (TypeError, ValueError) as exc:
            raise InvalidConfigurationError(f"bad model section: {exc}") from exc
        _check("model", self, {"time_embed_dim": int})

    def mlp_spec(self, dim: int = DATA_DIM) -> MLPSpec:
        return MLPSpec(dim, dim, self.hidden, self.activation, self.time_embed_dim)


@dataclass(frozen=True, slots=True)
class CltsSection:
    """Timestep curriculum; ``mu``/``sigma``/``target_iteration`` left as None take recipe defaults."""

    enabled: bool = True
    mu: float | None = None
    sigma: float | None = None
    target_iteration: int | None = None
    variant: CltsVariant = CltsVariant.MIXED

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "variant", CltsVariant(self.variant))
        except ValueError as exc:
            raise InvalidConfigurationError(f"unknown CLTS variant {self.variant!r}") from exc
        _check(
            "clts",
            self,
            {"enabled": bool, "mu": float, "sigma": float, "target_iteration": int},
            optional=("mu", "sigma", "target_iteration"),
        )


@dataclass(frozen=True, slots=True)
class OptimizerSection:
    beta0: float = 0.8
    beta2: float = 0.999
    l0: float = 1e-4
    beta_floor: float = 0.4
    ema_rate: float = 0.9999
    epsilon_adam: float = 1e-8
    weight_decay: float = 0.0
    momentum_decay: bool = True
    lr_compensation: bool = True
    grad_clip: float | None = None

    def __post_init__(self) -> None:
        floats = ("beta0", "beta2", "l0", "beta_floor", "ema_rate", "epsilon_adam", "weight_decay", "grad_clip")
        kinds: dict[str, type] = dict.fromkeys(floats, float)
        kinds.update(momentum_decay=bool, lr_compensation=bool)
        _check("optimizer", self, kinds, optional=("grad_clip",))


@dataclass(frozen=True, slots=True)
class RunSection:
    """Run-level knobs.

    Attributes:
        total_iterations: Length of the run; also the decay horizon.
        batch_size: Rows per training batch.
        eval_every: Cadence of metrics rows and sample-quality evaluation.
        checkpoint_every: Cadence of checkpoint files (0 disables).
        global_seed: Root of every random sub-stream.
        init_seed: Overrides only the initialization stream when set.
        eval_samples: Samples drawn per sample-quality evaluation.
        n_projections: Projections of the sliced Wasserstein distance.
        snapshot_iterations: Iterations whose raw parameters are kept in memory.
    """

    total_iterations: int = 20_000
    batch_size: int = 128
    eval_every: int = 1_000
    checkpoint_every: int = 5_000
    global_seed: int = 0
    init_seed: int | None = None
    eval_samples: int = 2048
    n_projections: int = 128
    snapshot_iterations: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        ints = ("total_iterations", "batch_size", "eval_every", "checkpoint_every", "global_seed", "init_seed",
                "eval_samples", "n_projections")
        _check("run", self, dict.fromkeys(ints, int), optional=("init_seed",))
        try:
            object.__setattr__(self, "snapshot_iterations", tuple(int(i) for i in self.snapshot_iterations))
        except (TypeError, ValueError) as exc:
            raise InvalidConfigurationError(f"run.snapshot_iterations must be a list of ints: {exc}") from exc
        if self.total_iterations < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise InvalidConfigurationError("total_iterations, batch_size and eval_every must be >= 1")
        if self.checkpoint_every < 0:
            raise InvalidConfigurationError("checkpoint_every must be >= 0")
        if self.eval_samples < 1 or self.n_projections < 1:
            raise InvalidConfigurationError("eval_samples and n_projections must be >= 1")


_SECTIONS: dict[str, type] = {
    "dataset": DatasetSpec,
    "schedule": ScheduleSection,
    "model": ModelSection,
    "clts": CltsSection,
    "optimizer": OptimizerSection,
    "run": RunSection,
}


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    """diffaccel experiment configuration.

    Each section validates itself on construction; the derived objects
    (schedule, CLTS and optimizer configs) validate again when built.
    """

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    model: ModelSection = field(default_factory=ModelSection)
    clts: CltsSection = field(default_factory=CltsSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    run: RunSection = field(default_factory=RunSection)

    def build_schedule(self) -> NoiseSchedule:
        return build_schedule(self.schedule.kind, self.schedule.T)

    def clts_config(self) -> CltsConfig:
        target = self.clts.target_iteration
        if target is None:
            target = max(1, round(TARGET_FRACTION * self.run.total_iterations))
        return CltsConfig.for_horizon(
            self.schedule.T, target, mu=self.clts.mu, sigma=self.clts.sigma, variant=self.clts.variant
        )

    def mdlrc_config(self) -> MdlrcConfig:
        opt = self.optimizer
        return MdlrcConfig(
            beta0=opt.beta0,
            beta2=opt.beta2,
            l0=opt.l0,
            total_iterations=self.run.total_iterations,
            beta_floor=opt.beta_floor,
            ema_rate=opt.ema_rate,
            epsilon_adam=opt.epsilon_adam,
            weight_decay=opt.weight_decay,
            momentum_decay=opt.momentum_decay,
            lr_compensation=opt.lr_compensation,
            grad_clip=opt.grad_clip,
        )

    def validate(self) -> Self:
        """Build every derived object once so bad values surface before training starts."""
        self.build_schedule()
        self.clts_config()
        self.mdlrc_config()
        self.model.mlp_spec()
        return self

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
        for name in _SECTIONS:
            section = asdict(getattr(self, name))
            data[name] = {k: _plain(v) for k, v in section.items()}
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise InvalidConfigurationError(f"unsupported config schema_version {version}")
        unknown = set(data) - set(_SECTIONS) - {"schema_version"}
        if unknown:
            raise InvalidConfigurationError(f"unknown config sections: {sorted(unknown)}")
        sections = {}
        for name, section_cls in _SECTIONS.items():
            values = data.get(name, {})
            if not isinstance(values, Mapping):
                raise InvalidConfigurationError(f"section '{name}' must be a table")
            allowed = {f.name for f in fields(section_cls)}
            extra = set(values) - allowed
            if extra:
                raise InvalidConfigurationError(f"unknown keys in [{name}]: {sorted(extra)}")
            try:
                sections[name] = section_cls(**values)
            except TypeError as exc:
                raise InvalidConfigurationError(f"bad section '{name}': {exc}") from exc
        return cls(**sections)

    @classmethod
    def from_toml(cls, path: Path) -> Self:
        """Load configuration from a TOML file; keys live under ``[diffaccel]``."""
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise InvalidConfigurationError(f"{path}: {exc}") from exc
        return cls.from_dict(data.get("diffaccel", data))

    @classmethod
    def from_json(cls, path: Path) -> Self:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidConfigurationError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidConfigurationError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, config_path: Path | None = None) -> Self:
        """Load configuration from file, auto-detecting format.

        Priority:
        1. Explicit path
        2. diffaccel.toml in CWD
        3. diffaccel.json in CWD
        4. Built-in defaults (the toy recipe)
        """
        if config_path is not None:
            if not config_path.exists():
                raise InvalidConfigurationError(f"config file not found: {config_path}")
            return cls._load_file(config_path)

        cwd = Path.cwd()
        for path in (cwd / "diffaccel.toml", cwd / "diffaccel.json"):
            if path.exists():
                return cls._load_file(path)
        return cls()

    @classmethod
    def _load_file(cls, path: Path) -> Self:
        if path.suffix == ".toml":
            return cls.from_toml(path)
        return cls.from_json(path)

    def with_overrides(self, assignments: Iterable[str]) -> ExperimentConfig:
        """Apply ``section.key=value`` assignments; values parse as JSON, else as strings."""
        data = self.to_dict()
        for assignment in assignments:
            key, sep, raw = assignment.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot or section not in _SECTIONS:
                raise InvalidConfigurationError(f"override must look like section.key=value, got {assignment!r}")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            data[section][name] = value
        return ExperimentConfig.from_dict(data)

    def with_section(self, name: str, **changes: Any) -> ExperimentConfig:
        """Copy with some fields of one section replaced."""
        return replace(self, **{name: replace(getattr(self, name), **changes)})


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, str):
        return str(value)
    return value
