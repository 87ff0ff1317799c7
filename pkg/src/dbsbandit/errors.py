"""Error types shared across the toolkit."""


class DbsBanditError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(DbsBanditError, ValueError):
    """An argument violates a documented precondition."""


class FitDivergenceError(DbsBanditError, RuntimeError):
    """Network training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite training loss {loss!r} at step {step}")


class InternalConsistencyError(DbsBanditError, RuntimeError):
    """A maintained invariant (e.g. covariance factorization) broke down."""


class UndefinedCorrelationError(DbsBanditError, RuntimeError):
    """Correlation requested on a degenerate (zero-variance) sample."""
