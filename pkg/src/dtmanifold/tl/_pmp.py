"""Hamiltonian, minimum principle control and the bidirectional remainders."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from dtmanifold.pp import CutoffProfile, Problem, cutoff_apply
from dtmanifold.utils import (
    ConvergenceError,
    NonConvexityError,
    apply_matrix,
)


class BidirectionalPoint(NamedTuple):
    """
    State and next costate, the arguments of the bidirectional dynamics.

    Both fields may carry leading batch axes: shapes (..., n).
    """

    x: np.ndarray
    lambda_plus: np.ndarray


@dataclass
class HamiltonianEval:
    """
    Hamiltonian ``H = lambda_plus' f(x, u) + l(x, u)`` and its derivatives.

    Attributes
    ----------
    value
        H, shape (...).
    grad_u
        dH/du, shape (..., m).
    grad_x
        dH/dx, shape (..., n).
    hess_uu
        d2H/du2, shape (..., m, m).
    grad_lambda
        dH/dlambda_plus = f(x, u), shape (..., n).
    """

    value: np.ndarray
    grad_u: np.ndarray
    grad_x: np.ndarray
    hess_uu: np.ndarray
    grad_lambda: np.ndarray


def _broadcast_point(prob: Problem, x, lambda_plus, u=None):
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lambda_plus, dtype=float)
    if x.shape[-1:] != (prob.n,) or lam.shape[-1:] != (prob.n,):
        raise ValueError(
            f"`x` and `lambda_plus` need trailing dimension n={prob.n}, got {x.shape} and {lam.shape}."
        )
    lead = np.broadcast_shapes(x.shape[:-1], lam.shape[:-1])
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape[-1:] != (prob.m,):
            raise ValueError(f"`u` needs trailing dimension m={prob.m}, got {u.shape}.")
        lead = np.broadcast_shapes(lead, u.shape[:-1])
        u = np.broadcast_to(u, lead + (prob.m,))
    x = np.broadcast_to(x, lead + (prob.n,))
    lam = np.broadcast_to(lam, lead + (prob.n,))
    return x, lam, u


def _derivatives(prob: Problem, x, u, lam, hessian: bool = True) -> dict:
    """First (and optionally second) derivatives of H in (x, u)."""
    n = prob.n
    Jf = prob.f_nl.jacobian(x, u)
    Jl = prob.l_nl.jacobian(x, u)[..., 0, :]
    fx = prob.A + Jf[..., :n]
    fu = prob.B + Jf[..., n:]
    parts = {
        "f": prob.dynamics(x, u),
        "fx": fx,
        "fu": fu,
        # nonlinear part of dH/dx, used for G
        "grad_x_nl": (lam[..., :, None] * Jf[..., :n]).sum(axis=-2) + Jl[..., :n],
        "grad_x": (lam[..., :, None] * fx).sum(axis=-2)
        + apply_matrix(prob.Q, x)
        + apply_matrix(prob.S, u)
        + Jl[..., :n],
        "grad_u": (lam[..., :, None] * fu).sum(axis=-2)
        + apply_matrix(prob.S.T, x)
        + apply_matrix(prob.R, u)
        + Jl[..., n:],
    }
    if hessian:
        quadratic = np.block([[prob.Q, prob.S], [prob.S.T, prob.R]])
        Hf = prob.f_nl.hessian(x, u)
        Hl = prob.l_nl.hessian(x, u)[..., 0, :, :]
        parts["hess"] = (lam[..., :, None, None] * Hf).sum(axis=-3) + Hl + quadratic
    return parts


def hamiltonian_eval(prob: Problem, x, u, lambda_plus) -> HamiltonianEval:
    """
    Evaluate the Hamiltonian and its analytic derivatives.

    Parameters
    ----------
    prob
        The control problem.
    x
        State, shape (..., n).
    u
        Control, shape (..., m).
    lambda_plus
        Next costate, shape (..., n).

    Returns
    -------
    The Hamiltonian value, gradients and control Hessian.

    Example
    -------
    >>> prob = Problem(A=[[0.5]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
    >>> float(hamiltonian_eval(prob, np.zeros(1), np.zeros(1), np.zeros(1)).value)
    0.0
    """
    x, lam, u = _broadcast_point(prob, x, lambda_plus, u)
    parts = _derivatives(prob, x, u, lam)
    n = prob.n
    value = (lam * parts["f"]).sum(axis=-1) + prob.stage_cost(x, u)
    return HamiltonianEval(
        value=value,
        grad_u=parts["grad_u"],
        grad_x=parts["grad_x"],
        hess_uu=parts["hess"][..., n:, n:],
        grad_lambda=parts["f"],
    )


def optimal_control(
    prob: Problem,
    pt: BidirectionalPoint,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> np.ndarray:
    """
    Minimize the Hamiltonian over the control by Newton's method.

    Newton starts from the linear-quadratic minimizer
    ``u0 = -R^{-1}(B' lambda_plus + S' x)`` and stops per point once
    ``|dH/du| <= tol * (1 + |lambda_plus| + |x|)``. Points are iterated
    independently, so batched and single-point calls agree.

    Parameters
    ----------
    prob
        The control problem.
    pt
        State and next costate, possibly batched.
    tol
        Relative first-order tolerance.
    max_iter
        Maximum number of Newton steps.

    Returns
    -------
    The minimizing control, shape (..., m).

    Raises
    ------
    NonConvexityError
        If d2H/du2 is not positive definite at an iterate.
    ConvergenceError
        If the first-order condition is not met within `max_iter` steps.
    """
    x, lam, _ = _broadcast_point(prob, pt.x, pt.lambda_plus)
    Rinv = np.linalg.inv(prob.R)
    u = -apply_matrix(Rinv, apply_matrix(prob.B.T, lam) + apply_matrix(prob.S.T, x))
    if prob.f_nl.is_zero and prob.l_nl.is_zero:
        return u

    n = prob.n
    scale = tol * (1.0 + np.linalg.norm(lam, axis=-1) + np.linalg.norm(x, axis=-1))
    for iteration in range(max_iter + 1):
        parts = _derivatives(prob, x, u, lam)
        grad = parts["grad_u"]
        done = np.linalg.norm(grad, axis=-1) <= scale
        if np.all(done):
            return u
        if iteration == max_iter:
            worst = np.unravel_index(np.argmax(~done), done.shape)
            raise ConvergenceError(
                f"Control minimization did not converge in {max_iter} iterations at "
                f"x={x[worst]}, lambda_plus={lam[worst]}."
            )
        hess_uu = parts["hess"][..., n:, n:]
        min_eig = np.linalg.eigvalsh(hess_uu)[..., 0]
        bad = (min_eig <= 0.0) & ~done
        if np.any(bad):
            idx = np.unravel_index(np.argmax(bad), bad.shape)
            raise NonConvexityError(
                f"Hamiltonian is not convex in u at x={x[idx]}, lambda_plus={lam[idx]} "
                f"(smallest eigenvalue of d2H/du2 is {min_eig[idx]:.3e})."
            )
        step = np.linalg.solve(hess_uu, grad[..., None])[..., 0]
        u = np.where(done[..., None], u, u - step)


def nonlinear_remainders(
    prob: Problem,
    pt: BidirectionalPoint,
    cutoff: tuple[CutoffProfile, CutoffProfile] | None = None,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Nonlinear remainders F and G of the bidirectional dynamics.

    With ``u* = argmin_u H``: ``x+ = A x - B R^{-1} B' lambda_plus + F`` and
    ``lambda = Q x + A' lambda_plus + G``. G is dH/dx at u* minus its linear
    part; no du*/dx term is needed because dH/du vanishes at u*.

    Parameters
    ----------
    prob
        The control problem; must have S = 0 (see :func:`~dtmanifold.pp.eliminate_cross_term`).
    pt
        State and next costate, possibly batched.
    cutoff
        Optional (state profile, costate profile) localizing the arguments first.
    tol, max_iter
        Passed to :func:`optimal_control`.

    Returns
    -------
    (F, G), each of shape (..., n).
    """
    if prob.has_cross_term:
        raise ValueError("`prob` has a cross term S; run eliminate_cross_term first.")
    x, lam, _ = _broadcast_point(prob, pt.x, pt.lambda_plus)
    if prob.is_linear_quadratic:
        return np.zeros(x.shape), np.zeros(x.shape)
    if cutoff is not None:
        x = cutoff_apply(x, cutoff[0])
        lam = cutoff_apply(lam, cutoff[1])
    u = optimal_control(prob, BidirectionalPoint(x, lam), tol=tol, max_iter=max_iter)
    parts = _derivatives(prob, x, u, lam, hessian=False)
    Rinv_Bt = np.linalg.solve(prob.R, prob.B.T)
    # f(x, u*) - (A x - B R^{-1} B' lambda_plus) without cancellation
    F = apply_matrix(prob.B, u + apply_matrix(Rinv_Bt, lam)) + prob.f_nl.evaluate(x, u)
    G = parts["grad_x_nl"]
    return F, G


def bidirectional_residual(prob: Problem, x, lambda_, x_plus, lambda_plus) -> float:
    """
    Residual of the bidirectional Hamiltonian dynamics.

    Returns ``max(|x+ - A x + B R^{-1} B' lambda+ - F|, |lambda - Q x - A' lambda+ - G|)``,
    maximized over any batch axes; zero iff the quadruple satisfies the dynamics.

    Parameters
    ----------
    prob
        The control problem with S = 0.
    x, lambda_
        Current state and costate.
    x_plus, lambda_plus
        Next state and costate.
    """
    F, G = nonlinear_remainders(prob, BidirectionalPoint(x, lambda_plus))
    G_B = prob.B @ np.linalg.solve(prob.R, prob.B.T)
    state = (
        np.asarray(x_plus, dtype=float)
        - apply_matrix(prob.A, x)
        + apply_matrix(G_B, lambda_plus)
        - F
    )
    costate = (
        np.asarray(lambda_, dtype=float)
        - apply_matrix(prob.Q, x)
        - apply_matrix(prob.A.T, lambda_plus)
        - G
    )
    return float(
        max(
            np.max(np.linalg.norm(state, axis=-1)),
            np.max(np.linalg.norm(costate, axis=-1)),
        )
    )


def reduced_hamiltonian_hessian(
    prob: Problem, pt: BidirectionalPoint
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Second derivatives of the reduced Hamiltonian ``H(x, u*(x, lambda+), lambda+)``.

    The control is eliminated with the Schur complement of d2H/du2, which gives
    the partials of the tangent dynamics
    ``dx+ = H_lx dx + H_ll dlambda+`` and ``dlambda = H_xx dx + H_lx' dlambda+``.

    Parameters
    ----------
    prob
        The control problem.
    pt
        State and next costate, possibly batched.

    Returns
    -------
    (H_xx, H_lx, H_ll), each of shape (..., n, n); H_lx has rows indexed by
    lambda+ and columns by x.
    """
    x, lam, _ = _broadcast_point(prob, pt.x, pt.lambda_plus)
    u = optimal_control(prob, BidirectionalPoint(x, lam))
    parts = _derivatives(prob, x, u, lam)
    n = prob.n
    hess = parts["hess"]
    H_xx = hess[..., :n, :n]
    H_xu = hess[..., :n, n:]
    H_uu = hess[..., n:, n:]
    fx, fu = parts["fx"], parts["fu"]
    # Huu^{-1} [H_ux | fu']
    rhs = np.concatenate([np.swapaxes(H_xu, -1, -2), np.swapaxes(fu, -1, -2)], axis=-1)
    solved = np.linalg.solve(H_uu, rhs)
    Huu_inv_Hux = solved[..., :n]
    Huu_inv_fut = solved[..., n:]
    H_xx_red = H_xx - H_xu @ Huu_inv_Hux
    H_lx_red = fx - fu @ Huu_inv_Hux
    H_ll_red = -fu @ Huu_inv_fut
    return H_xx_red, H_lx_red, H_ll_red
