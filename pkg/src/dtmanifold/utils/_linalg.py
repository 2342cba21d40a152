"""Small linear algebra helpers shared by the solvers."""

from __future__ import annotations

import numpy as np


def symmetrize(M: np.ndarray) -> np.ndarray:
    """Return (M + M')/2."""
    return 0.5 * (M + M.T)


def spectral_radius(M: np.ndarray) -> float:
    """Largest eigenvalue modulus of a square matrix (0 for an empty matrix)."""
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def numerical_rank(M: np.ndarray, rel_tol: float = 1e-10) -> int:
    """
    Numerical rank from the singular values.

    Singular values below `rel_tol` times the largest one count as zero.

    Parameters
    ----------
    M
        Matrix (real or complex).
    rel_tol
        Relative threshold.
    """
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def apply_matrix(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """
    Apply `M` to every vector stored along the last axis of `X`.

    Row results only depend on the row itself (no BLAS blocking), which keeps
    batched evaluations bitwise identical to single-point ones.

    Parameters
    ----------
    M
        Matrix of shape (p, q).
    X
        Array of shape (..., q).

    Returns
    -------
    Array of shape (..., p).
    """
    X = np.asarray(X, dtype=float)
    return (X[..., None, :] * M).sum(axis=-1)
