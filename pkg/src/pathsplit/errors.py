"""Exception types shared across the package."""


class PathSplitError(Exception):
    """Base class for errors raised by this package."""


class DomainError(PathSplitError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigurationError(PathSplitError, ValueError):
    """Incompatible or malformed configuration."""


class EstimatorError(PathSplitError, ArithmeticError):
    """An estimator produced a value that should be impossible."""


class StepError(PathSplitError, ArithmeticError):
    """A numerical step left the admissible state space."""

    def __init__(self, message, segment=None, step=None):
        self.message = message
        self.segment = segment
        self.step = step
        where = []
        if step is not None:
            where.append(f"step {step}")
        if segment is not None:
            where.append(f"segment {segment}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))
