"""Discrete-time algebraic Riccati equation and closed-loop guarantees."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from loguru import logger

from dtmanifold.pp import Problem
from dtmanifold.utils import ConvergenceError, spectral_radius, symmetrize


@dataclass
class StabilizingSolution:
    """
    Stabilizing solution of the DTARE.

    Attributes
    ----------
    P
        Symmetric positive semidefinite DTARE solution, (n, n).
    K
        Feedback gain, (m, n); the closed loop is ``A + B K``.
    closed_loop_spectrum
        Eigenvalues of ``A + B K``.
    alpha
        Spectral radius of ``A + B K``.
    lyapunov_M
        Solution of ``Acl' M Acl - M = -I``.
    closed_loop
        Closed-loop matrix ``A + B K``.
    iterations
        Number of Riccati recursion steps.
    residual
        Max-norm DTARE residual of `P`.
    """

    P: np.ndarray
    K: np.ndarray
    closed_loop_spectrum: np.ndarray
    alpha: float
    lyapunov_M: np.ndarray
    closed_loop: np.ndarray
    iterations: int = 0
    residual: float = 0.0


def _riccati_map(prob: Problem, P: np.ndarray) -> np.ndarray:
    """One step of the Riccati difference recursion."""
    A, B, S = prob.A, prob.B, prob.S
    cross = A.T @ P @ B + S
    gram = B.T @ P @ B + prob.R
    return symmetrize(A.T @ P @ A - cross @ np.linalg.solve(gram, cross.T) + prob.Q)


def dtare_residual(prob: Problem, P: np.ndarray) -> float:
    """
    Max-norm residual of ``P - A'PA + (A'PB + S)(B'PB + R)^{-1}(A'PB + S)' - Q``.

    Parameters
    ----------
    prob
        The control problem.
    P
        Candidate solution.
    """
    return float(np.abs(P - _riccati_map(prob, P)).max())


def feedback_gain(prob: Problem, P: np.ndarray) -> np.ndarray:
    """
    Optimal feedback gain ``K = -(B'PB + R)^{-1}(B'PA + S')``.

    The closed loop ``A + B K`` equals ``(I + B R^{-1} B' P)^{-1} A`` when S = 0.

    Parameters
    ----------
    prob
        The control problem.
    P
        DTARE solution.

    Returns
    -------
    The gain, shape (m, n).

    Raises
    ------
    numpy.linalg.LinAlgError
        If ``B'PB + R`` is singular.
    """
    gram = prob.B.T @ P @ prob.B + prob.R
    return -np.linalg.solve(gram, prob.B.T @ P @ prob.A + prob.S.T)


def lyapunov_check(Acl: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """
    Solve ``Acl' M Acl - M = -I`` by the fixed-point recursion ``M <- Acl' M Acl + I``.

    Parameters
    ----------
    Acl
        Closed-loop matrix with spectral radius < 1.
    tol
        Stop when the recursion residual falls below `tol` (relative to ``1 + |M|``).
    max_iter
        Iteration cap.

    Returns
    -------
    M, the sum of ``(Acl')^k Acl^k`` over k >= 0.

    Example
    -------
    >>> lyapunov_check(np.zeros((2, 2)))
    array([[1., 0.],
           [0., 1.]])
    """
    Acl = np.atleast_2d(np.asarray(Acl, dtype=float))
    rho = spectral_radius(Acl)
    if rho >= 1.0:
        raise ValueError(f"`Acl` must have spectral radius < 1, got {rho:.6g}.")
    n = Acl.shape[0]
    identity = np.eye(n)
    M = identity.copy()
    for _ in range(max_iter):
        M_next = symmetrize(Acl.T @ M @ Acl + identity)
        delta = np.abs(M_next - M).max()
        M = M_next
        if delta <= tol * (1.0 + np.abs(M).max()):
            return M
    raise ConvergenceError(f"Lyapunov recursion did not converge in {max_iter} iterations.")


def solve_dtare(
    prob: Problem,
    tol: float = 1e-13,
    max_iter: int = 100_000,
    lyapunov_tol: float = 1e-12,
    max_condition: float = 1e12,
) -> StabilizingSolution:
    """
    Stabilizing solution of the discrete-time algebraic Riccati equation.

    The Riccati difference recursion runs from ``P0 = Q`` until
    ``|P_{k+1} - P_k| <= tol * (1 + |P_k|)``, symmetrizing every iterate. One
    Newton (Hewer) refinement follows: the Lyapunov equation of the current
    closed loop is solved with :func:`scipy.linalg.solve_discrete_lyapunov`
    and the refined P is kept only if it lowers the residual.

    Parameters
    ----------
    prob
        The control problem; :func:`~dtmanifold.pp.validate_problem` should pass.
    tol
        Relative stopping tolerance of the recursion.
    max_iter
        Iteration cap of the recursion.
    lyapunov_tol
        Tolerance of :func:`lyapunov_check`.
    max_condition
        Largest accepted condition number of ``B'P_kB + R``.

    Returns
    -------
    The stabilizing solution.

    Raises
    ------
    ConvergenceError
        If the recursion does not converge.
    numpy.linalg.LinAlgError
        If ``B'P_kB + R`` becomes numerically singular.

    Example
    -------
    >>> prob = Problem(A=[[0.5]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
    >>> round(float(solve_dtare(prob).P[0, 0]), 7)
    1.1327822
    """
    P = symmetrize(prob.Q.copy())
    for iteration in range(1, max_iter + 1):
        gram = prob.B.T @ P @ prob.B + prob.R
        if np.linalg.cond(gram) > max_condition:
            raise np.linalg.LinAlgError(
                f"B'PB + R is numerically singular at Riccati iteration {iteration}."
            )
        P_next = _riccati_map(prob, P)
        delta = np.abs(P_next - P).max()
        P = P_next
        if delta <= tol * (1.0 + np.abs(P).max()):
            break
    else:
        raise ConvergenceError(f"Riccati recursion did not converge in {max_iter} iterations.")
    logger.info(f"Riccati recursion converged in {iteration} iterations.")

    residual = dtare_residual(prob, P)
    K = feedback_gain(prob, P)
    Acl = prob.A + prob.B @ K
    if spectral_radius(Acl) < 1.0:
        weight = prob.Q + K.T @ prob.R @ K + prob.S @ K + K.T @ prob.S.T
        P_newton = symmetrize(scipy.linalg.solve_discrete_lyapunov(Acl.T, symmetrize(weight)))
        newton_residual = dtare_residual(prob, P_newton)
        if newton_residual < residual:
            logger.debug(f"Newton refinement lowered the DTARE residual to {newton_residual:.3e}.")
            P, residual = P_newton, newton_residual
            K = feedback_gain(prob, P)
            Acl = prob.A + prob.B @ K

    spectrum = np.linalg.eigvals(Acl)
    alpha = float(np.max(np.abs(spectrum)))
    if alpha >= 1.0:
        raise ConvergenceError(
            f"Riccati solution is not stabilizing (closed-loop spectral radius {alpha:.6g})."
        )
    M = lyapunov_check(Acl, tol=lyapunov_tol)
    return StabilizingSolution(
        P=P,
        K=K,
        closed_loop_spectrum=spectrum,
        alpha=alpha,
        lyapunov_M=M,
        closed_loop=Acl,
        iterations=iteration,
        residual=residual,
    )
