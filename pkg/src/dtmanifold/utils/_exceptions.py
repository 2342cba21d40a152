"""Exceptions raised by the solvers."""

from __future__ import annotations


class ConvergenceError(RuntimeError):
    """An iterative method did not reach its tolerance."""


class RolloutError(ConvergenceError):
    """A closed-loop trajectory failed to decay.

    Parameters
    ----------
    message
        Human readable description.
    points
        Initial states (one per row) whose trajectories did not decay.
    """

    def __init__(self, message: str, points=None):
        super().__init__(message)
        self.points = points

    def __reduce__(self):
        return self.__class__, (str(self), self.points)


class NonConvexityError(ValueError):
    """The Hamiltonian is not strictly convex in the control at some point."""
