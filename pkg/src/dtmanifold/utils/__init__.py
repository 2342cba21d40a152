"""Import all utility functions and classes."""

from ._exceptions import ConvergenceError, NonConvexityError, RolloutError
from ._logging import log_and_raise, setup_logging
from ._linalg import apply_matrix, numerical_rank, spectral_radius, symmetrize

__all__ = [
    "ConvergenceError",
    "NonConvexityError",
    "RolloutError",
    "apply_matrix",
    "log_and_raise",
    "numerical_rank",
    "setup_logging",
    "spectral_radius",
    "symmetrize",
]
