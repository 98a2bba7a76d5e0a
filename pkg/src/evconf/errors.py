"""Exception types shared across the toolkit."""


class ContractError(ValueError):
    """An argument violates a documented precondition (shape, range, emptiness)."""


class DomainError(ContractError):
    """A numeric argument lies outside the mathematical domain of the operation."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite intermediate or result."""


class TrainingError(RuntimeError):
    """Training diverged or could not produce a usable model."""


class UndefinedMetricError(ValueError):
    """The metric is mathematically undefined for the given inputs."""


class ParseError(ValueError):
    """A data file is malformed.  Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
