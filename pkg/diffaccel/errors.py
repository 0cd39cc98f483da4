"""Exception hierarchy for diffaccel.

Every error carries the process exit code the CLI reports for it.
"""

from __future__ import annotations

from pathlib import Path


class DiffAccelError(Exception):
    """Base class for all diffaccel errors."""

    exit_code: int = 1


class InvalidConfigurationError(DiffAccelError, ValueError):
    """A configuration value is outside its documented domain."""

    exit_code = 2


class ContractViolation(DiffAccelError, ValueError):
    """A caller broke an operation's precondition (shapes, lengths, ranges)."""


class NoiseStreamExhausted(ContractViolation):
    """A recorded noise stream was asked for more draws than it holds."""


class TrainingDivergenceError(DiffAccelError, FloatingPointError):
    """Loss, gradient or parameters became non-finite."""

    exit_code = 3

    def __init__(self, message: str, iteration: int | None = None) -> None:
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint_path: Path | None = None

    def __str__(self) -> str:
        base = super().__str__()
        if self.iteration is None:
            return base
        return f"{base} (iteration {self.iteration})"


class NumericError(DiffAccelError, ArithmeticError):
    """A finite-difference probe produced non-finite values."""

    def __init__(self, message: str, r: float) -> None:
        super().__init__(f"{message} (r={r:g})")
        self.r = r


class ArtifactParseError(DiffAccelError, ValueError):
    """An artifact file (metrics, curve, grid, spectrum) is malformed."""

    exit_code = 4

    def __init__(
        self,
        message: str,
        path: Path | str | None = None,
        line: int | None = None,
        field: str | None = None,
    ) -> None:
        self.path = Path(path) if path is not None else None
        self.line = line
        self.field = field
        where = []
        if self.path is not None:
            where.append(str(self.path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
