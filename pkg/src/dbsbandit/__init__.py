"""Contextual bandit toolkit and closed-loop surrogate for adaptive
deep-brain-stimulation frequency selection."""

__version__ = "0.1.0"

from .errors import (
    DbsBanditError,
    FitDivergenceError,
    InternalConsistencyError,
    InvalidInputError,
    UndefinedCorrelationError,
)

__all__ = [
    "__version__",
    "DbsBanditError",
    "FitDivergenceError",
    "InternalConsistencyError",
    "InvalidInputError",
    "UndefinedCorrelationError",
]
