"""Local stable manifold ``lambda = P x + psi(x)`` as the fixed point of a contraction."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from dtmanifold.pp import (
    CutoffProfile,
    Problem,
    eliminate_cross_term,
    gronwall_bounds,
    validate_problem,
)
from dtmanifold.tl._configs import Tolerances
from dtmanifold.tl._grid import GridFn
from dtmanifold.tl._pmp import BidirectionalPoint, nonlinear_remainders
from dtmanifold.tl._riccati import StabilizingSolution, lyapunov_check, solve_dtare
from dtmanifold.tl._spectral import pencil_eigenvalues, reciprocity_check
from dtmanifold.utils import (
    ConvergenceError,
    RolloutError,
    apply_matrix,
    log_and_raise,
    spectral_radius,
)


class _Loop(NamedTuple):
    """Matrices of the closed loop shared by every evaluation of f_psi and h_psi."""

    P: np.ndarray
    Acl: np.ndarray
    Minv: np.ndarray
    G_B: np.ndarray
    KtBt: np.ndarray
    AclT_P: np.ndarray
    cutoff: tuple[CutoffProfile, CutoffProfile]


def _loop(prob: Problem, P: np.ndarray, K: np.ndarray, epsilon: float) -> _Loop:
    if prob.has_cross_term:
        raise ValueError("`prob` has a cross term S; run eliminate_cross_term first.")
    n = prob.n
    G_B = prob.B @ np.linalg.solve(prob.R, prob.B.T)
    coupling = np.eye(n) + G_B @ P
    if np.linalg.cond(coupling) > 1e12:
        raise np.linalg.LinAlgError("I + B R^{-1} B' P is numerically singular.")
    Acl = prob.A + prob.B @ K
    radius = epsilon * np.sqrt(n)
    return _Loop(
        P=P,
        Acl=Acl,
        Minv=np.linalg.inv(coupling),
        G_B=G_B,
        KtBt=K.T @ prob.B.T,
        AclT_P=Acl.T @ P,
        cutoff=(
            CutoffProfile(radius),
            CutoffProfile((1.0 + np.linalg.norm(P, 2)) * radius),
        ),
    )


def _f_and_h(prob: Problem, psi: GridFn, x, x_plus, loop: _Loop):
    psi_plus = psi(x_plus)
    lambda_plus = apply_matrix(loop.P, x_plus) + psi_plus
    F, G = nonlinear_remainders(prob, BidirectionalPoint(x, lambda_plus), cutoff=loop.cutoff)
    f = apply_matrix(loop.Minv, F - apply_matrix(loop.G_B, psi_plus))
    g = G - apply_matrix(loop.KtBt, psi_plus + apply_matrix(loop.P, f))
    h = apply_matrix(loop.AclT_P, f) + g
    return f, h


def f_psi_eval(prob: Problem, P, K, psi: GridFn, x, x_plus) -> np.ndarray:
    """
    Nonlinear part of the closed-loop state update, ``x+ = (A + BK) x + f_psi(x, x+)``.

    ``f_psi = (I + B R^{-1} B' P)^{-1} (F(x, P x+ + psi(x+)) - B R^{-1} B' psi(x+))``,
    with F evaluated through the cut-off.

    Parameters
    ----------
    prob
        The control problem with S = 0.
    P, K
        DTARE solution and feedback gain.
    psi
        Current nonlinear part of the manifold.
    x, x_plus
        Points of shape (..., n).
    """
    loop = _loop(prob, np.asarray(P), np.asarray(K), psi.epsilon)
    return _f_and_h(prob, psi, x, x_plus, loop)[0]


def h_psi_eval(prob: Problem, P, K, psi: GridFn, x, x_plus) -> np.ndarray:
    """
    Forcing term of the diagonalized costate update ``psi(x) = (A + BK)' psi(x+) + h_psi``.

    ``h_psi = (A + BK)' P f_psi + g_psi`` with
    ``g_psi = G(x, P x+ + psi(x+)) - K'B' (psi(x+) + P f_psi)``. It vanishes at
    ``(0, 0)``.

    Parameters
    ----------
    prob
        The control problem with S = 0.
    P, K
        DTARE solution and feedback gain.
    psi
        Current nonlinear part of the manifold.
    x, x_plus
        Points of shape (..., n).
    """
    loop = _loop(prob, np.asarray(P), np.asarray(K), psi.epsilon)
    return _f_and_h(prob, psi, x, x_plus, loop)[1]


def _newton_solve(prob, psi, x, y, seed, loop, tol, max_iter):
    """Damped Newton on ``g(y) = y - seed - f_psi(x, y)`` for a single point."""
    n = prob.n

    def residual(z):
        return z - seed - _f_and_h(prob, psi, x, z, loop)[0]

    g = residual(y)
    for _ in range(max_iter):
        norm_g = np.linalg.norm(g)
        if norm_g <= tol:
            return y
        jac = np.empty((n, n))
        for j in range(n):
            step = 1e-7 * (1.0 + abs(y[j]))
            shifted = y.copy()
            shifted[j] += step
            jac[:, j] = (residual(shifted) - g) / step
        direction = np.linalg.solve(jac, g)
        t = 1.0
        for _ in range(30):
            candidate = y - t * direction
            g_candidate = residual(candidate)
            if np.linalg.norm(g_candidate) < norm_g:
                y, g = candidate, g_candidate
                break
            t *= 0.5
        else:
            break
    if np.linalg.norm(g) <= tol:
        return y
    raise ConvergenceError(f"Implicit state step did not converge at x={x}.")


def _implicit_step(prob, psi, x, loop, tol, fixed_point_iter, newton_iter) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    seed = apply_matrix(loop.Acl, x)
    y = seed.copy()
    done = np.zeros(x.shape[:-1], dtype=bool)
    for _ in range(fixed_point_iter):
        y_new = seed + _f_and_h(prob, psi, x, y, loop)[0]
        step = np.linalg.norm(y_new - y, axis=-1)
        y = np.where(done[..., None], y, y_new)
        done = done | (step <= tol)
        if np.all(done):
            return y

    flat_x = x.reshape(-1, prob.n)
    flat_y = y.reshape(-1, prob.n).copy()
    flat_seed = seed.reshape(-1, prob.n)
    pending = np.flatnonzero(~done.ravel())
    logger.warning(
        f"Fixed-point iteration of the implicit state step stalled at {len(pending)} point(s); "
        "switching to damped Newton."
    )
    for i in pending:
        flat_y[i] = _newton_solve(
            prob, psi, flat_x[i], flat_y[i], flat_seed[i], loop, tol, newton_iter
        )
    return flat_y.reshape(x.shape)


def implicit_state_step(
    prob: Problem,
    P,
    K,
    psi: GridFn,
    x,
    tol: float = 1e-12,
    fixed_point_iter: int = 30,
    newton_iter: int = 50,
) -> np.ndarray:
    """
    Solve the implicit closed-loop update ``x+ = (A + BK) x + f_psi(x, x+)``.

    The fixed-point iteration starts from ``(A + BK) x`` and runs per point until
    successive iterates differ by at most `tol`. Points still moving after
    `fixed_point_iter` iterations are finished by damped Newton with a
    finite-difference Jacobian.

    Parameters
    ----------
    prob
        The control problem with S = 0.
    P, K
        DTARE solution and feedback gain.
    psi
        Current nonlinear part of the manifold.
    x
        States in the box of half width ``psi.epsilon``, shape (..., n).
    tol
        Absolute tolerance on the update.
    fixed_point_iter
        Fixed-point iterations before the Newton fallback.
    newton_iter
        Newton iteration cap.

    Returns
    -------
    The next states, shape (..., n).

    Raises
    ------
    ValueError
        If a state lies outside the domain.
    ConvergenceError
        If Newton does not converge; the message names the state.
    """
    x = np.asarray(x, dtype=float)
    outside = ~psi.in_domain(x)
    if np.any(outside):
        raise ValueError(
            f"`x` must lie in the box of half width {psi.epsilon}; "
            f"got {x[outside].reshape(-1, prob.n)[0]}."
        )
    loop = _loop(prob, np.asarray(P), np.asarray(K), psi.epsilon)
    return _implicit_step(prob, psi, x, loop, tol, fixed_point_iter, newton_iter)


@dataclass
class Trajectory:
    """
    A closed-loop trajectory on the manifold.

    Attributes
    ----------
    states
        States ``x_0, ..., x_L``, shape (L + 1, n).
    decay_ratio
        Largest ratio ``|x_{l+1}|_M / |x_l|_M`` in the closed-loop Lyapunov norm.
    linear_ratio
        Contraction factor of the linear closed loop in the same norm.
    lipschitz
        Sampled Lipschitz constant ``N1 epsilon`` of the pair ``(f_psi, h_psi)``.
    decay_bound
        Predicted one-step decay ``(alpha + N1 epsilon) / (1 - N1 epsilon)``,
        inf when ``N1 epsilon >= 1``.
    envelope
        Linear Gronwall bound on ``|x_l|_M`` from `linear_ratio` and the largest
        nonlinear perturbation.
    """

    states: np.ndarray
    decay_ratio: float
    linear_ratio: float
    envelope: np.ndarray
    lipschitz: float = 0.0
    decay_bound: float = 0.0

    @property
    def horizon(self) -> int:
        """Number of steps taken."""
        return len(self.states) - 1


def _lyapunov_norm(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.sqrt((x * apply_matrix(M, x)).sum(axis=-1))


def _linear_ratio(M: np.ndarray) -> float:
    # |Acl x|_M^2 = |x|_M^2 - |x|^2 <= (1 - 1/|M|) |x|_M^2
    return float(np.sqrt(max(0.0, 1.0 - 1.0 / np.linalg.eigvalsh(M)[-1])))


def _pair_lipschitz(prob, psi, loop, n_pairs, seed) -> float:
    """Largest difference quotient of ``(f_psi, h_psi)`` over random nearby pairs ``(x, x+)``."""
    n = prob.n
    eps = psi.epsilon
    rng = np.random.default_rng(seed)
    z = rng.uniform(-eps, eps, size=(n_pairs, 2 * n))
    z_bar = np.clip(z + rng.uniform(-1e-3 * eps, 1e-3 * eps, size=z.shape), -eps, eps)

    def stacked(points):
        f, h = _f_and_h(prob, psi, points[:, :n], points[:, n:], loop)
        return np.concatenate([f, h], axis=-1)

    distance = np.linalg.norm(z - z_bar, axis=-1)
    keep = distance > 0
    change = np.linalg.norm(stacked(z) - stacked(z_bar), axis=-1)
    return float((change[keep] / distance[keep]).max(initial=0.0))


def _decay_bound(alpha: float, lipschitz: float) -> float:
    # |x+| <= alpha |x| + N1 eps (|x| + |x+|)
    if lipschitz >= 1.0:
        return float("inf")
    return (alpha + lipschitz) / (1.0 - lipschitz)


def rollout(
    prob: Problem,
    P,
    K,
    psi: GridFn,
    x0,
    horizon: int | None = None,
    lyapunov_M: np.ndarray | None = None,
    tolerances: Tolerances | None = None,
    seed: int = 0,
) -> Trajectory:
    """
    Iterate :func:`implicit_state_step` from `x0`.

    Without `horizon` the rollout stops once ``|x_l| <= zero_state_tol`` or after
    ``max_horizon`` steps. Every step must shrink the closed-loop Lyapunov norm
    ``|x|_M = sqrt(x'Mx)``.

    The observed decay is compared with ``(alpha + N1 epsilon) / (1 - N1 epsilon)``,
    where ``N1 epsilon`` is sampled as in :func:`lipschitz_diagnostics`. A bound
    of one or more, or a decay slower than the bound, is logged as a warning.

    Parameters
    ----------
    prob
        The control problem with S = 0.
    P, K
        DTARE solution and feedback gain.
    psi
        Nonlinear part of the manifold.
    x0
        Initial state in the domain, shape (n,).
    horizon
        Fixed number of steps.
    lyapunov_M
        Solution of ``Acl' M Acl - M = -I``; computed when omitted.
    tolerances
        Step and stopping tolerances.
    seed
        Seed of the Lipschitz sampling.

    Returns
    -------
    The trajectory with its decay diagnostics.

    Raises
    ------
    RolloutError
        If a step does not decrease the Lyapunov norm.
    """
    tolerances = tolerances or Tolerances()
    P, K = np.asarray(P), np.asarray(K)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (prob.n,):
        raise ValueError(f"`x0` must have shape {(prob.n,)}, got {x0.shape}.")
    if not psi.in_domain(x0):
        raise ValueError(f"`x0` must lie in the box of half width {psi.epsilon}, got {x0}.")
    loop = _loop(prob, P, K, psi.epsilon)
    M = lyapunov_check(loop.Acl) if lyapunov_M is None else lyapunov_M

    states = [x0]
    ratios = [0.0]
    perturbation = 0.0
    left_box = False
    x = x0
    for _ in range(tolerances.max_horizon if horizon is None else horizon):
        if horizon is None and np.linalg.norm(x) <= tolerances.zero_state_tol:
            break
        y = _implicit_step(
            prob,
            psi,
            x,
            loop,
            tolerances.implicit_tol,
            tolerances.implicit_fixed_point_iter,
            tolerances.implicit_newton_iter,
        )
        perturbation = max(perturbation, float(_lyapunov_norm(M, y - loop.Acl @ x)))
        if np.linalg.norm(x) > tolerances.zero_state_tol:
            ratio = float(_lyapunov_norm(M, y) / _lyapunov_norm(M, x))
            if ratio >= 1.0:
                raise RolloutError(
                    f"Trajectory from x0={x0} does not decay (ratio {ratio:.6g} at step {len(states)}).",
                    points=x0[None, :],
                )
            ratios.append(ratio)
        if not left_box and not psi.in_domain(y):
            logger.warning(f"Trajectory from x0={x0} leaves the grid box; psi is extrapolated.")
            left_box = True
        states.append(y)
        x = y

    decay = max(ratios)
    lipschitz = _pair_lipschitz(prob, psi, loop, tolerances.lipschitz_pairs, seed)
    bound = _decay_bound(spectral_radius(loop.Acl), lipschitz)
    if bound >= 1.0:
        logger.warning(
            f"Decay bound {bound:.4g} >= 1 at epsilon={psi.epsilon:.4g} "
            f"(N1 epsilon = {lipschitz:.4g}); decay from x0={x0} is not guaranteed."
        )
    elif decay > bound * (1.0 + 1e-9):
        logger.warning(
            f"Trajectory from x0={x0} decays at ratio {decay:.6g}, slower than the bound {bound:.6g}."
        )

    linear = _linear_ratio(M)
    states = np.array(states)
    envelope = gronwall_bounds(
        "linear",
        len(states) - 1,
        delta=linear,
        lipschitz=perturbation,
        u0=float(_lyapunov_norm(M, x0)),
    )
    return Trajectory(
        states=states,
        decay_ratio=decay,
        linear_ratio=linear,
        envelope=envelope,
        lipschitz=lipschitz,
        decay_bound=bound,
    )


def _transform_nodes(prob, psi, nodes, loop, M, horizon, tolerances):
    """Series ``sum_l (A + BK)'^l h_psi(x_l, x_{l+1})`` for every node, each truncated on its own."""
    n = prob.n
    total = np.zeros_like(nodes)
    steps = np.zeros(len(nodes), dtype=int)
    x = nodes.copy()
    norm_M = _lyapunov_norm(M, x)
    ratio = np.zeros(len(nodes))
    active = np.linalg.norm(x, axis=-1) > tolerances.zero_state_tol
    W = np.eye(n)
    AclT = loop.Acl.T
    for l in range(tolerances.max_horizon if horizon is None else horizon):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa = x[idx]
        y = _implicit_step(
            prob,
            psi,
            xa,
            loop,
            tolerances.implicit_tol,
            tolerances.implicit_fixed_point_iter,
            tolerances.implicit_newton_iter,
        )
        h = _f_and_h(prob, psi, xa, y, loop)[1]
        total[idx] += apply_matrix(W, h)
        steps[idx] = l + 1

        norm_y = _lyapunov_norm(M, y)
        step_ratio = norm_y / norm_M[idx]
        bad = step_ratio >= 1.0
        if np.any(bad):
            raise RolloutError(
                f"Trajectories from {int(bad.sum())} node(s) do not decay, e.g. x0={nodes[idx[bad]][0]}.",
                points=nodes[idx[bad]],
            )
        ratio[idx] = np.maximum(ratio[idx], step_ratio)
        W = W @ AclT
        x[idx] = y
        norm_M[idx] = norm_y

        finished = np.linalg.norm(y, axis=-1) <= tolerances.zero_state_tol
        if horizon is None:
            tail = np.linalg.norm(W, 2) * np.linalg.norm(h, axis=-1) / (1.0 - ratio[idx])
            finished |= tail <= tolerances.tail_tol
        active[idx[finished]] = False
    return total, steps


def _apply_T(prob, P, K, psi, horizon=None, threads=1, tolerances=None, lyapunov_M=None):
    tolerances = tolerances or Tolerances()
    P, K = np.asarray(P), np.asarray(K)
    loop = _loop(prob, P, K, psi.epsilon)
    M = lyapunov_check(loop.Acl) if lyapunov_M is None else lyapunov_M
    nodes = psi.points()
    if threads <= 1 or len(nodes) < 2 * threads:
        total, steps = _transform_nodes(prob, psi, nodes, loop, M, horizon, tolerances)
    else:
        chunks = np.array_split(np.arange(len(nodes)), threads)
        total = np.zeros_like(nodes)
        steps = np.zeros(len(nodes), dtype=int)
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_transform_nodes, prob, psi, nodes[c], loop, M, horizon, tolerances)
                for c in chunks
            ]
            for c, future in zip(chunks, futures):
                total[c], steps[c] = future.result()
    return psi.with_values(total), int(steps.max(initial=0))


def apply_T(
    prob: Problem,
    P,
    K,
    psi: GridFn,
    horizon: int | None = None,
    threads: int = 1,
    tolerances: Tolerances | None = None,
) -> GridFn:
    """
    Apply the contraction ``(T psi)(x0) = sum_l (A + BK)'^l h_psi(x_l, x_{l+1})``.

    Every node starts a trajectory of :func:`implicit_state_step`. A node's series
    stops when its trajectory reaches the origin or when the tail bound
    ``|(A + BK)'^{l+1}| |h_psi(x_l, x_{l+1})| / (1 - q)`` drops below
    ``tail_tol``, with q the node's largest observed decay ratio. This is the
    sum of the linear bound of :func:`~dtmanifold.pp.gronwall_bounds` with
    ``delta=q`` and no forcing, taken in closed form for all nodes at once; the
    observed q replaces alpha because it already contains the nonlinear part.
    With an explicit `horizon` the tail test is off and each series has
    `horizon` terms.

    Nodes are independent: with ``threads > 1`` they are split into chunks
    evaluated in worker processes, and every node's sum is accumulated with
    row-local arithmetic, so the result does not depend on the chunking.

    Parameters
    ----------
    prob
        The control problem with S = 0.
    P, K
        DTARE solution and feedback gain.
    psi
        Current iterate.
    horizon
        Fixed number of series terms.
    threads
        Number of worker processes.
    tolerances
        Step and truncation tolerances.

    Returns
    -------
    The next iterate on the same grid, exactly zero at the origin node.

    Raises
    ------
    RolloutError
        If a trajectory does not decay; `points` holds the offending nodes.
    """
    return _apply_T(prob, P, K, psi, horizon=horizon, threads=threads, tolerances=tolerances)[0]


class LipschitzDiagnostics(NamedTuple):
    """Grid Lipschitz estimate of psi and its budget ``2 N1 epsilon / (1 - alpha)``."""

    l_hat: float
    budget: float

    @property
    def passed(self) -> bool:
        """True if the estimate is within the budget."""
        return self.l_hat <= self.budget


@dataclass
class ManifoldSolution:
    """
    Local stable manifold ``lambda = phi(x) = P x + psi(x)``.

    Attributes
    ----------
    problem
        The problem the manifold was computed for: cross term eliminated, at the
        final locality radius.
    P, K
        DTARE solution and feedback gain of `problem`.
    riccati
        The full DTARE solution.
    psi
        Converged nonlinear part on the grid.
    contraction_estimate
        Largest ratio of successive iteration deltas.
    iteration_count
        Number of applications of T.
    residual_history
        Sup-norm deltas ``|psi_{k+1} - psi_k|``.
    truncation_horizon
        Longest series used in the last application of T.
    epsilon
        Final locality radius.
    halvings
        How often the radius was halved.
    lipschitz
        Lipschitz diagnostics of `psi`.
    tolerances
        Tolerances used.
    """

    problem: Problem
    P: np.ndarray
    K: np.ndarray
    riccati: StabilizingSolution
    psi: GridFn
    contraction_estimate: float
    iteration_count: int
    residual_history: list[float]
    truncation_horizon: int
    epsilon: float
    halvings: int = 0
    lipschitz: LipschitzDiagnostics | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)


def _contraction_estimate(history: list[float]) -> float:
    ratios = [b / a for a, b in zip(history[:-1], history[1:]) if a > 0.0]
    return float(max(ratios, default=0.0))


def _iterate(prob, riccati, resolution, method, tolerances, threads, progress, halving):
    psi = GridFn.zeros(prob.n, prob.epsilon, resolution, prob.n, method)
    history: list[float] = []
    horizon = 0
    converged = False
    iterations = tqdm(
        range(tolerances.manifold_max_iter),
        desc=f"Contracting (epsilon={prob.epsilon:.4g})",
        disable=not progress,
    )
    for _ in iterations:
        new, horizon = _apply_T(
            prob,
            riccati.P,
            riccati.K,
            psi,
            threads=threads,
            tolerances=tolerances,
            lyapunov_M=riccati.lyapunov_M,
        )
        delta = psi.sup_distance(new)
        history.append(delta)
        psi = new
        logger.debug(f"Iteration {len(history)}: sup delta {delta:.3e}, horizon {horizon}.")
        if delta <= tolerances.manifold_tol:
            converged = True
            break
        if len(history) > 2 and history[-1] >= history[-2]:
            break
    return ManifoldSolution(
        problem=prob,
        P=riccati.P,
        K=riccati.K,
        riccati=riccati,
        psi=psi,
        contraction_estimate=_contraction_estimate(history),
        iteration_count=len(history),
        residual_history=history,
        truncation_horizon=horizon,
        epsilon=prob.epsilon,
        halvings=halving,
        tolerances=tolerances,
    ), converged


@log_and_raise((ValueError, ConvergenceError))
def solve_manifold(
    prob: Problem,
    resolution: int = 21,
    method: str = "cubic",
    tolerances: Tolerances | None = None,
    threads: int = 1,
    progress: bool = False,
    seed: int = 0,
) -> ManifoldSolution:
    """
    Compute the local stable manifold of the bidirectional dynamics.

    The problem is validated, its cross term eliminated and its DTARE solved.
    Starting from ``psi = 0`` the contraction :func:`apply_T` is iterated until
    the sup-norm change over the nodes is at most ``manifold_tol``. If the
    iteration does not converge, its contraction estimate is not below one, a
    trajectory fails to decay or the Lipschitz budget is exceeded, the locality
    radius is halved and the iteration restarts, at most ``max_halvings`` times.

    Parameters
    ----------
    prob
        The control problem; `prob.epsilon` is the initial locality radius.
    resolution
        Odd number of grid nodes per axis.
    method
        Interpolation of psi between nodes, "cubic" or "linear".
    tolerances
        Tolerances; defaults to :func:`~dtmanifold.tl.default_tolerances`.
    threads
        Worker processes for :func:`apply_T`.
    progress
        Show a progress bar over the iterations.
    seed
        Seed of the Lipschitz sampling.

    Returns
    -------
    The converged manifold.

    Raises
    ------
    ValueError
        If the problem fails validation or its spectrum is not hyperbolic.
    ConvergenceError
        If no radius down to ``epsilon / 2**max_halvings`` gives a converged manifold.

    Example
    -------
    >>> prob = Problem(A=[[0.5]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
    >>> sol = solve_manifold(prob, resolution=5)
    >>> sol.iteration_count
    1
    """
    tolerances = tolerances or Tolerances()
    report = validate_problem(prob, rank_tol=tolerances.rank_tol)
    if not report.passed:
        raise ValueError(f"Problem violates: {', '.join(report.failures)}.")
    reduced = eliminate_cross_term(prob)
    riccati = solve_dtare(
        reduced,
        tol=tolerances.dtare_tol,
        max_iter=tolerances.dtare_max_iter,
        lyapunov_tol=tolerances.lyapunov_tol,
    )
    spectrum = pencil_eigenvalues(
        reduced, zero_tol=tolerances.zero_eig_tol, infinite_tol=tolerances.infinite_eig_tol
    )
    if not reciprocity_check(spectrum, hyperbolicity_tol=tolerances.hyperbolicity_tol).hyperbolic:
        raise ValueError("The bidirectional dynamics are not hyperbolic at the origin.")

    epsilon = prob.epsilon
    for halving in range(tolerances.max_halvings + 1):
        current = reduced.with_epsilon(epsilon)
        try:
            sol, converged = _iterate(
                current, riccati, resolution, method, tolerances, threads, progress, halving
            )
        except RolloutError as e:
            reason = str(e)
        else:
            if not converged:
                reason = (
                    f"no convergence after {sol.iteration_count} iterations "
                    f"(contraction estimate {sol.contraction_estimate:.3g})"
                )
            elif sol.contraction_estimate >= 1.0:
                reason = f"contraction estimate {sol.contraction_estimate:.3g} >= 1"
            else:
                sol.lipschitz = lipschitz_diagnostics(
                    sol,
                    n_pairs=tolerances.lipschitz_pairs,
                    slack=tolerances.lipschitz_slack,
                    seed=seed,
                )
                if sol.lipschitz.passed:
                    logger.info(
                        f"Manifold converged in {sol.iteration_count} iterations at "
                        f"epsilon={epsilon:.6g} (contraction estimate "
                        f"{sol.contraction_estimate:.3g}, horizon {sol.truncation_horizon})."
                    )
                    return sol
                reason = (
                    f"Lipschitz estimate {sol.lipschitz.l_hat:.3g} exceeds budget "
                    f"{sol.lipschitz.budget:.3g}"
                )
        if halving < tolerances.max_halvings:
            epsilon /= 2.0
            logger.warning(f"Manifold iteration failed ({reason}); halving epsilon to {epsilon:.6g}.")
    raise ConvergenceError(
        f"Problem is outside the local regime: no convergence down to epsilon={epsilon:.6g} "
        f"after {tolerances.max_halvings} halvings (last failure: {reason})."
    )


def phi_eval(sol: ManifoldSolution, x) -> np.ndarray:
    """
    Costate on the manifold, ``phi(x) = P x + psi(x)``.

    Parameters
    ----------
    sol
        The manifold.
    x
        States in the domain box, shape (..., n).

    Raises
    ------
    ValueError
        If a state lies outside the domain.
    """
    x = np.asarray(x, dtype=float)
    outside = ~sol.psi.in_domain(x)
    if np.any(outside):
        raise ValueError(
            f"`x` must lie in the box of half width {sol.epsilon}; "
            f"got {x[outside].reshape(-1, sol.problem.n)[0]}."
        )
    return apply_matrix(sol.P, x) + sol.psi(x)


def _phi_unchecked(sol: ManifoldSolution, x) -> np.ndarray:
    return apply_matrix(sol.P, x) + sol.psi(x)


def invariance_residual(sol: ManifoldSolution, x) -> np.ndarray:
    """
    Residual of the costate equation along the graph ``lambda = phi(x)``.

    With ``x+`` from :func:`implicit_state_step` and ``lambda+ = phi(x+)`` the
    costate equation predicts ``lambda = Q x + A' lambda+ + G(x, lambda+)``; the
    residual is ``|phi(x) - lambda| / (1 + |phi(x)|)``. It uses only the
    bidirectional dynamics, not the diagonalized update.

    Parameters
    ----------
    sol
        The manifold.
    x
        States in the domain, shape (..., n).

    Returns
    -------
    Residuals of shape (...).
    """
    prob = sol.problem
    tol = sol.tolerances
    x = np.asarray(x, dtype=float)
    x_plus = implicit_state_step(
        prob,
        sol.P,
        sol.K,
        sol.psi,
        x,
        tol=tol.implicit_tol,
        fixed_point_iter=tol.implicit_fixed_point_iter,
        newton_iter=tol.implicit_newton_iter,
    )
    lambda_plus = _phi_unchecked(sol, x_plus)
    loop = _loop(prob, sol.P, sol.K, sol.epsilon)
    _, G = nonlinear_remainders(prob, BidirectionalPoint(x, lambda_plus), cutoff=loop.cutoff)
    predicted = apply_matrix(prob.Q, x) + apply_matrix(prob.A.T, lambda_plus) + G
    phi = phi_eval(sol, x)
    return np.linalg.norm(phi - predicted, axis=-1) / (1.0 + np.linalg.norm(phi, axis=-1))


@dataclass
class ClosednessReport:
    """Largest curl ``|d phi_i/dx_j - d phi_j/dx_i|`` over interior nodes and its threshold."""

    value: float
    threshold: float
    spacing: float

    @property
    def passed(self) -> bool:
        """True if the curl estimate is below the threshold."""
        return self.value <= self.threshold


def closedness_check(
    sol: ManifoldSolution, constant: float = 10.0, floor: float = 1e-6
) -> ClosednessReport:
    """
    Check that phi is curl free, the discrete form of the manifold being Lagrangian.

    Central differences of the node values of phi give the Jacobian at every
    interior node; the report holds the largest antisymmetric part. The
    threshold is ``constant * h**2 + floor`` for node spacing h.

    Parameters
    ----------
    sol
        The manifold.
    constant
        Scale C of the discretization error.
    floor
        Floor of the threshold.
    """
    psi = sol.psi
    n = sol.problem.n
    h = psi.spacing
    threshold = constant * h**2 + floor
    if n == 1:
        return ClosednessReport(value=0.0, threshold=threshold, spacing=h)
    shape = psi.values.shape
    phi = apply_matrix(sol.P, psi.points()).reshape(shape) + psi.values
    interior = (slice(1, -1),) * n
    largest = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            d_phi_i_dxj = (np.roll(phi[..., i], -1, axis=j) - np.roll(phi[..., i], 1, axis=j)) / (2 * h)
            d_phi_j_dxi = (np.roll(phi[..., j], -1, axis=i) - np.roll(phi[..., j], 1, axis=i)) / (2 * h)
            curl = np.abs(d_phi_i_dxj - d_phi_j_dxi)[interior]
            if curl.size:
                largest = max(largest, float(curl.max()))
    return ClosednessReport(value=largest, threshold=threshold, spacing=h)


def lipschitz_diagnostics(
    sol: ManifoldSolution, n_pairs: int = 10_000, slack: float = 1e-10, seed: int = 0
) -> LipschitzDiagnostics:
    """
    Compare the grid Lipschitz estimate of psi with the budget ``2 N1 epsilon / (1 - alpha)``.

    ``N1 epsilon`` is estimated as the largest difference quotient of the pair
    ``(f_psi, h_psi)`` over `n_pairs` random nearby point pairs ``(x, x+)`` in the
    domain. `slack` is added to the budget so an exactly linear problem passes.

    Parameters
    ----------
    sol
        The manifold.
    n_pairs
        Number of sampled pairs.
    slack
        Absolute slack of the budget.
    seed
        Seed of the sampling.
    """
    loop = _loop(sol.problem, sol.P, sol.K, sol.epsilon)
    lipschitz = _pair_lipschitz(sol.problem, sol.psi, loop, n_pairs, seed)
    budget = 2.0 * lipschitz / (1.0 - sol.riccati.alpha) + slack
    return LipschitzDiagnostics(l_hat=sol.psi.lipschitz_estimate, budget=budget)
