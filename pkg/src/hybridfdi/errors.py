"""Exception hierarchy shared by all modules.

The CLI maps :class:`ConfigError` to exit code 2 and :class:`NumericError`
(and subclasses) to exit code 3.
"""


class FdiError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(FdiError, ValueError):
    """Invalid or inconsistent configuration."""


class DomainError(ConfigError):
    """An input lies outside its declared domain."""

    def __init__(self, field, value, message=None):
        self.field = field
        self.value = value
        super().__init__(message or f"{field}={value!r} is outside its valid range")


class DependencyError(FdiError):
    """A required upstream artefact (e.g. a calibration row) is missing."""


class ParseError(FdiError, ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class ShapeError(FdiError, ValueError):
    """Array dimensions do not chain."""


class StateError(FdiError, RuntimeError):
    """Operation called on an object that is not ready (e.g. unfitted)."""


class NumericError(FdiError, ArithmeticError):
    """Numerical failure (non-finite values, singular matrices, ...)."""


class NumericFailure(NumericError):
    """Non-finite intermediate value inside the plant model."""

    def __init__(self, stage, message=None):
        self.stage = stage
        super().__init__(message or f"non-finite value in stage '{stage}'")


class OptimizationError(NumericError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, gap=None):
        self.gap = gap
        if gap is not None:
            message = f"{message} (gap={gap:.3e})"
        super().__init__(message)


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss=float("nan")):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
