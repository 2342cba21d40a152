"""Smooth cut-off functions localizing the nonlinear remainders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _flat(t: np.ndarray) -> np.ndarray:
    # e^{-1/t} for t > 0, 0 otherwise
    positive = t > 0
    return np.where(positive, np.exp(-1.0 / np.where(positive, t, 1.0)), 0.0)


def cutoff_profile(s) -> np.ndarray:
    """
    Scalar bump profile: 1 on [0, 1], 0 on [2, inf), smooth and monotone between.

    Parameters
    ----------
    s
        Normalized radius |y| / epsilon (array-like, non-negative).

    Returns
    -------
    Profile values in [0, 1] with the shape of `s`.
    """
    s = np.asarray(s, dtype=float)
    inner = _flat(2.0 - s)
    outer = _flat(s - 1.0)
    return inner / (inner + outer)


@dataclass(frozen=True)
class CutoffProfile:
    """
    Radial cut-off with radius `epsilon`: identity on the ball of radius epsilon,
    zero outside the ball of radius 2 * epsilon.

    Parameters
    ----------
    epsilon
        Inner radius, must be positive.
    """

    epsilon: float

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"`epsilon` must be positive, got {self.epsilon}.")

    def __call__(self, y) -> np.ndarray:
        return cutoff_apply(y, self)


def cutoff_apply(y, c: CutoffProfile) -> np.ndarray:
    """
    Localize vectors: ``y * rho(|y| / epsilon)`` along the last axis.

    Parameters
    ----------
    y
        Vectors, shape (..., d).
    c
        The cut-off profile.

    Returns
    -------
    Localized vectors with the shape of `y`.

    Example
    -------
    >>> cutoff_apply(np.array([0.05]), CutoffProfile(0.1))
    array([0.05])
    """
    y = np.asarray(y, dtype=float)
    radius = np.linalg.norm(y, axis=-1, keepdims=True)
    return y * cutoff_profile(radius / c.epsilon)
