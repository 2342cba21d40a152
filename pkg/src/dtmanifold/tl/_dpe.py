"""Optimal cost and feedback recovered from the manifold, and their certification."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from loguru import logger

from dtmanifold.pp import Problem
from dtmanifold.tl._grid import GridFn
from dtmanifold.tl._manifold import ManifoldSolution, implicit_state_step, phi_eval
from dtmanifold.tl._pmp import BidirectionalPoint, hamiltonian_eval, optimal_control
from dtmanifold.utils import ConvergenceError, apply_matrix

PATHS = ("ray", "staircase")


@dataclass
class CostField:
    """
    Optimal cost pi and feedback kappa tabulated on a grid.

    Attributes
    ----------
    pi
        Scalar grid function (n_out = 1).
    kappa
        Control grid function (n_out = m).
    provenance
        "manifold" or "oracle".
    diagnostics
        Free-form details of the computation.
    """

    pi: GridFn
    kappa: GridFn
    provenance: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in ("manifold", "oracle"):
            raise ValueError(f"`provenance` must be 'manifold' or 'oracle', got '{self.provenance}'.")
        if self.pi.n_out != 1:
            raise ValueError(f"`pi` must be scalar, got {self.pi.n_out} outputs.")


def _segments(x: np.ndarray, path: str) -> list[tuple[np.ndarray, np.ndarray]]:
    """(start, direction) of the straight pieces of the integration path from 0 to x."""
    if path == "ray":
        return [(np.zeros_like(x), x)]
    segments = []
    start = np.zeros_like(x)
    for i in range(x.shape[-1]):
        direction = np.zeros_like(x)
        direction[..., i] = x[..., i]
        segments.append((start, direction))
        start = start + direction
    return segments


def _line_integral(sol, segments, order):
    t, w = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    total = 0.0
    for start, direction in segments:
        points = start[None] + t.reshape((-1,) + (1,) * start.ndim) * direction[None]
        values = (phi_eval(sol, points) * direction[None]).sum(axis=-1)
        total = total + np.tensordot(w, values, axes=(0, 0))
    return total


def integrate_cost(
    sol: ManifoldSolution,
    x,
    path: str = "ray",
    tol: float = 1e-12,
    max_order: int = 1024,
) -> np.ndarray:
    """
    Optimal cost ``pi(x)`` as the line integral of ``phi`` from the origin.

    The integral of ``phi(y) . dy`` is evaluated with Gauss-Legendre rules of
    order 8, 16, ... up to `max_order` until two successive orders agree to
    ``tol * (1 + |pi|)`` at every point. Because phi is closed the value does not
    depend on the path; the staircase path (one coordinate at a time) serves as
    a cross-check of the straight ray. ``pi(0) = 0``.

    Parameters
    ----------
    sol
        The manifold.
    x
        States in the domain box, shape (..., n).
    path
        "ray" or "staircase".
    tol
        Relative agreement of successive orders.
    max_order
        Largest quadrature order.

    Returns
    -------
    Costs of shape (...).

    Raises
    ------
    ConvergenceError
        If the quadrature does not settle by `max_order`.
    """
    if path not in PATHS:
        raise ValueError(f"`path` must be one of {PATHS}, got '{path}'.")
    x = np.asarray(x, dtype=float)
    segments = _segments(x, path)
    order = 8
    previous = _line_integral(sol, segments, order)
    while order < max_order:
        order *= 2
        current = _line_integral(sol, segments, order)
        change = np.abs(current - previous)
        if np.all(change <= tol * (1.0 + np.abs(current))):
            if order > 256:
                logger.warning(f"Cost quadrature needed order {order}.")
            return current
        previous = current
    raise ConvergenceError(
        f"Cost quadrature along the {path} path did not converge by order {max_order} "
        f"(largest change {float(np.max(change)):.3e})."
    )


def feedback_policy(prob: Problem, sol: ManifoldSolution, x) -> np.ndarray:
    """
    Optimal feedback ``kappa(x) = argmin_u H(x, u, phi(x+))``.

    The next state comes from :func:`implicit_state_step` on the manifold. The
    control is computed for `prob` itself, so a cross term S is honored even
    though the manifold was computed after eliminating it.

    Parameters
    ----------
    prob
        The original control problem.
    sol
        Its manifold.
    x
        States in the domain box, shape (..., n).

    Returns
    -------
    Controls of shape (..., m); ``kappa(0) = 0``.
    """
    tol = sol.tolerances
    x = np.asarray(x, dtype=float)
    x_plus = implicit_state_step(
        sol.problem,
        sol.P,
        sol.K,
        sol.psi,
        x,
        tol=tol.implicit_tol,
        fixed_point_iter=tol.implicit_fixed_point_iter,
        newton_iter=tol.implicit_newton_iter,
    )
    lambda_plus = apply_matrix(sol.P, x_plus) + sol.psi(x_plus)
    return optimal_control(
        prob,
        BidirectionalPoint(x, lambda_plus),
        tol=tol.control_tol,
        max_iter=tol.control_max_iter,
    )


def cost_field(prob: Problem, sol: ManifoldSolution) -> CostField:
    """
    Tabulate ``pi`` (ray quadrature) and ``kappa`` at the nodes of the manifold grid.

    Parameters
    ----------
    prob
        The original control problem.
    sol
        Its manifold.
    """
    tol = sol.tolerances
    template = sol.psi
    nodes = template.points()
    pi = integrate_cost(sol, nodes, tol=tol.quadrature_tol, max_order=tol.quadrature_max_order)
    kappa = feedback_policy(prob, sol, nodes)
    grid = GridFn.zeros(template.n, template.epsilon, template.resolution, 1, template.method)
    return CostField(
        pi=grid.with_values(pi[:, None]),
        kappa=grid.with_values(kappa),
        provenance="manifold",
        diagnostics={"epsilon": sol.epsilon, "resolution": template.resolution},
    )


@dataclass
class DPEReport:
    """
    Residuals of the dynamic programming equations at sample points.

    Attributes
    ----------
    samples
        Sample states, shape (N, n).
    pi
        ``pi`` at the samples.
    r1
        ``pi(x) - pi(f(x, kappa)) - l(x, kappa)``.
    r2
        ``dpi/dx(f(x, kappa)) df/du + dl/du``, shape (N, m).
    tol
        Threshold on the scaled residuals.
    """

    samples: np.ndarray
    pi: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    tol: float

    @property
    def scale(self) -> np.ndarray:
        """Scale ``1 + |pi(x)|`` of each residual."""
        return 1.0 + np.abs(self.pi)

    @property
    def max_r1(self) -> float:
        """Largest scaled |r1|."""
        return float(np.max(np.abs(self.r1) / self.scale, initial=0.0))

    @property
    def max_r2(self) -> float:
        """Largest scaled |r2|."""
        return float(np.max(np.linalg.norm(self.r2, axis=-1) / self.scale, initial=0.0))

    @property
    def passed(self) -> bool:
        """True if both scaled residuals are within `tol`."""
        return self.max_r1 <= self.tol and self.max_r2 <= self.tol

    def to_frame(self) -> pd.DataFrame:
        """Residual table, one row per sample."""
        n = self.samples.shape[-1]
        table = pd.DataFrame({f"x{i + 1}": self.samples[:, i] for i in range(n)})
        table["pi"] = self.pi
        table["r1"] = self.r1
        for j in range(self.r2.shape[-1]):
            table[f"r2_{j + 1}"] = self.r2[:, j]
        return table


def dpe_residual(
    prob: Problem,
    pi: Callable[[np.ndarray], np.ndarray],
    kappa: Callable[[np.ndarray], np.ndarray],
    grad_pi: Callable[[np.ndarray], np.ndarray],
    samples,
    tol: float = 1e-6,
) -> DPEReport:
    """
    Evaluate the dynamic programming equations at sample states.

    ``r1 = pi(x) - pi(x+) - l(x, kappa(x))`` and ``r2 = dH/du(x, kappa(x), grad_pi(x+))``
    with ``x+ = f(x, kappa(x))``. The gradient is taken from `grad_pi` (usually
    phi) rather than by differentiating pi.

    Parameters
    ----------
    prob
        The original control problem.
    pi
        Batched cost, points (N, n) to values (N,).
    kappa
        Batched feedback, points (N, n) to controls (N, m).
    grad_pi
        Batched cost gradient, points (N, n) to (N, n).
    samples
        Sample states, shape (N, n).
    tol
        Pass when both residuals scaled by ``1 + |pi(x)|`` are at most `tol`.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    u = kappa(samples)
    x_plus = prob.dynamics(samples, u)
    pi_x = np.reshape(pi(samples), len(samples))
    r1 = pi_x - np.reshape(pi(x_plus), len(samples)) - prob.stage_cost(samples, u)
    r2 = hamiltonian_eval(prob, samples, u, grad_pi(x_plus)).grad_u
    return DPEReport(samples=samples, pi=pi_x, r1=r1, r2=r2, tol=tol)


def gradient_consistency(sol: ManifoldSolution, samples, step: float | None = None) -> float:
    """
    Largest relative mismatch between central differences of pi and phi.

    Parameters
    ----------
    sol
        The manifold.
    samples
        Interior sample states, shape (N, n).
    step
        Difference step, by default ``1e-5 * epsilon``.

    Returns
    -------
    ``max |D pi - phi| / (|phi| + step)`` over the samples.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[-1]
    step = 1e-5 * sol.epsilon if step is None else step
    tol = sol.tolerances
    shifts = step * np.eye(n)
    stacked = np.concatenate(
        [samples[:, None, :] + shifts[None], samples[:, None, :] - shifts[None]], axis=1
    )
    values = integrate_cost(sol, stacked, tol=tol.quadrature_tol, max_order=tol.quadrature_max_order)
    gradient = (values[:, :n] - values[:, n:]) / (2.0 * step)
    phi = phi_eval(sol, samples)
    mismatch = np.linalg.norm(gradient - phi, axis=-1) / (np.linalg.norm(phi, axis=-1) + step)
    return float(mismatch.max(initial=0.0))

