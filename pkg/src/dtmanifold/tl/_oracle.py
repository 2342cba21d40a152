"""Brute-force value iteration, the reference for the manifold based cost."""

from __future__ import annotations

import numpy as np
from loguru import logger
from scipy.interpolate import RegularGridInterpolator
from tqdm import tqdm

from dtmanifold.pp import Problem, eliminate_cross_term
from dtmanifold.tl._dpe import CostField
from dtmanifold.tl._grid import GridFn
from dtmanifold.tl._riccati import solve_dtare
from dtmanifold.utils import ConvergenceError, log_and_raise

MAX_ORACLE_DIMENSION = 2


def _odd_count(half_width: float, step: float) -> int:
    count = int(round(2.0 * half_width / step)) + 1
    return count if count % 2 else count + 1


def _control_grid(m: int, bound: float, step: float) -> np.ndarray:
    axis = bound * np.linspace(-1.0, 1.0, _odd_count(bound, step))
    axis[len(axis) // 2] = 0.0
    mesh = np.meshgrid(*([axis] * m), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


class _Transitions:
    """Successor lookups of one block of states: query points, quadratic scale and stage cost."""

    def __init__(self, prob: Problem, states: np.ndarray, controls: np.ndarray, domain: float):
        x_plus = prob.dynamics(states[:, None, :], controls[None, :, :])
        self.cost = prob.stage_cost(states[:, None, :], controls[None, :, :])
        # outside the box pi(y) = s^2 pi(y / s) with s = |y|_inf / domain
        s = np.maximum(np.abs(x_plus).max(axis=-1) / domain, 1.0)
        self.scale = s**2
        self.query = np.clip(x_plus / s[..., None], -domain, domain)

    def bellman(self, interpolant) -> tuple[np.ndarray, np.ndarray]:
        shape = self.cost.shape
        successor = interpolant(self.query.reshape(-1, self.query.shape[-1])).reshape(shape)
        total = self.cost + self.scale * successor
        best = np.argmin(total, axis=1)
        return total[np.arange(shape[0]), best], best


@log_and_raise((ValueError, ConvergenceError))
def value_iteration_oracle(
    prob: Problem,
    domain: float | None = None,
    state_step: float = 1e-3,
    control_bound: float | None = None,
    control_step: float = 1e-3,
    tol: float = 1e-10,
    max_sweeps: int = 100_000,
    chunk_size: int = 4096,
    progress: bool = False,
) -> CostField:
    """
    Optimal cost and feedback by value iteration on a state grid.

    Each Bellman sweep computes ``pi(x) = min_u {pi(f(x, u)) + l(x, u)}`` at every
    state node by exhaustive search over a control grid, with ``pi`` between nodes
    interpolated multilinearly. Successors outside the box use the quadratic
    extrapolation ``pi(y) = s**2 pi(y / s)``, ``s = |y|_inf / domain``. The
    iteration starts from the over-estimate ``pi_0 = 10 x'Px``, so the iterates
    decrease monotonically, and stops when the sup change is at most `tol`.

    Parameters
    ----------
    prob
        The control problem, n <= 2.
    domain
        Half width of the state box; defaults to `prob.epsilon`.
    state_step
        Node spacing of the state grid.
    control_bound
        Half width of the control box; defaults to ``2 * domain``.
    control_step
        Node spacing of the control grid.
    tol
        Stopping tolerance on the sup change between sweeps.
    max_sweeps
        Sweep cap.
    chunk_size
        Number of states processed at once.
    progress
        Show a progress bar over the sweeps.

    Returns
    -------
    Cost field with provenance "oracle". `diagnostics` holds the sweep count,
    the sup-change history and whether the iterates decreased monotonically
    after the first sweep.

    Raises
    ------
    ValueError
        If n > 2 or a grid parameter is not positive.
    ConvergenceError
        If the sup change stays above `tol` for `max_sweeps` sweeps.
    """
    n, m = prob.n, prob.m
    if n > MAX_ORACLE_DIMENSION:
        raise ValueError(f"Value iteration is limited to n <= {MAX_ORACLE_DIMENSION}, got n={n}.")
    domain = prob.epsilon if domain is None else float(domain)
    control_bound = 2.0 * domain if control_bound is None else float(control_bound)
    for name, value in [
        ("domain", domain),
        ("state_step", state_step),
        ("control_bound", control_bound),
        ("control_step", control_step),
    ]:
        if not value > 0:
            raise ValueError(f"`{name}` must be positive, got {value}.")

    P = solve_dtare(eliminate_cross_term(prob)).P
    grid = GridFn.zeros(n, domain, _odd_count(domain, state_step), 1, method="linear")
    states = grid.points()
    controls = _control_grid(m, control_bound, control_step)
    if len(states) * len(controls) > 50_000_000:
        logger.warning(
            f"{len(states) * len(controls)} state-control pairs are tabulated; "
            "consider a coarser `state_step` or `control_step`."
        )
    blocks = [
        _Transitions(prob, states[start : start + chunk_size], controls, domain)
        for start in range(0, len(states), chunk_size)
    ]
    logger.info(
        f"Value iteration on {len(states)} states and {len(controls)} controls "
        f"(domain {domain:.4g}, control bound {control_bound:.4g})."
    )

    values = 10.0 * (states * (states @ P.T)).sum(axis=-1)
    shape = (grid.resolution,) * n
    history: list[float] = []
    monotone = True
    policy = np.zeros(len(states), dtype=int)
    for sweep in tqdm(range(max_sweeps), desc="Bellman sweeps", disable=not progress):
        interpolant = RegularGridInterpolator(
            (grid.axis,) * n, values.reshape(shape), method="linear", bounds_error=False, fill_value=None
        )
        updated = np.empty_like(values)
        for start, block in zip(range(0, len(states), chunk_size), blocks):
            stop = start + len(block.cost)
            updated[start:stop], policy[start:stop] = block.bellman(interpolant)
        change = float(np.abs(updated - values).max())
        if sweep > 0 and np.any(updated > values + 1e-15 * (1.0 + np.abs(values))):
            monotone = False
        history.append(change)
        values = updated
        logger.debug(f"Sweep {sweep + 1}: sup change {change:.3e}.")
        if change <= tol:
            break
    else:
        raise ConvergenceError(
            f"Value iteration did not converge in {max_sweeps} sweeps (last change {history[-1]:.3e})."
        )
    logger.info(f"Value iteration converged in {len(history)} sweeps.")

    return CostField(
        pi=grid.with_values(values[:, None]),
        kappa=grid.with_values(controls[policy]),
        provenance="oracle",
        diagnostics={
            "sweeps": len(history),
            "history": history,
            "monotone": monotone,
            "state_step": grid.spacing,
            "control_step": control_bound * 2.0 / (_odd_count(control_bound, control_step) - 1),
        },
    )
