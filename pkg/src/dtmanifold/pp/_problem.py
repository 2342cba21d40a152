"""Optimal control problem definition, validation and cross-term elimination."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from loguru import logger

from dtmanifold.pp._polynomial import PolyMap
from dtmanifold.utils import apply_matrix, numerical_rank, symmetrize

MAX_DIMENSION = 8


def _as_matrix(name: str, value, shape: tuple[int, int]) -> np.ndarray:
    M = np.array(value, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.shape != shape:
        raise ValueError(f"`{name}` must have shape {shape}, got {M.shape}.")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"`{name}` contains non-finite entries.")
    M.flags.writeable = False
    return M


@dataclass(frozen=True, eq=False)
class Problem:
    """
    Infinite-horizon discrete-time optimal control problem.

    Dynamics ``x+ = A x + B u + f_nl(x, u)`` and stage cost
    ``l = 1/2 x'Qx + x'Su + 1/2 u'Ru + l_nl(x, u)``.

    Only structural checks (shapes, finiteness, dimension limits) run on
    construction; the positivity and stabilizability assumptions are checked by
    :func:`validate_problem`.

    Parameters
    ----------
    A
        State matrix, (n, n).
    B
        Input matrix, (n, m).
    Q
        State weight, (n, n).
    R
        Control weight, (m, m).
    S
        Cross weight, (n, m). Defaults to zero.
    f_nl
        Nonlinear part of the dynamics, a :class:`PolyMap` with n outputs.
    l_nl
        Nonlinear part of the stage cost, a :class:`PolyMap` with one output.
    epsilon
        Locality radius of the domain.

    Example
    -------
    >>> prob = Problem(A=[[0.5]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
    >>> prob.n, prob.m
    (1, 1)
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray | None = None
    f_nl: PolyMap | None = None
    l_nl: PolyMap | None = None
    epsilon: float = 0.1
    n: int = field(init=False)
    m: int = field(init=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim == 0:
            A = A.reshape(1, 1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"`A` must be square, got shape {A.shape}.")
        n = A.shape[0]
        B = np.array(self.B, dtype=float)
        if B.ndim == 0:
            B = B.reshape(1, 1)
        if B.ndim != 2 or B.shape[0] != n:
            raise ValueError(f"`B` must have {n} rows, got shape {B.shape}.")
        m = B.shape[1]
        if not (1 <= n <= MAX_DIMENSION and 1 <= m <= MAX_DIMENSION):
            raise ValueError(
                f"State and control dimensions must lie in [1, {MAX_DIMENSION}], got n={n}, m={m}."
            )
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "A", _as_matrix("A", A, (n, n)))
        object.__setattr__(self, "B", _as_matrix("B", B, (n, m)))
        object.__setattr__(self, "Q", _as_matrix("Q", self.Q, (n, n)))
        object.__setattr__(self, "R", _as_matrix("R", self.R, (m, m)))
        S = np.zeros((n, m)) if self.S is None else self.S
        object.__setattr__(self, "S", _as_matrix("S", S, (n, m)))

        f_nl = self.f_nl if self.f_nl is not None else PolyMap(n, m, n)
        l_nl = self.l_nl if self.l_nl is not None else PolyMap(n, m, 1)
        if (f_nl.n_in_x, f_nl.n_in_u, f_nl.n_out) != (n, m, n):
            raise ValueError(
                f"`f_nl` must map (n={n}, m={m}) to {n} outputs, got "
                f"({f_nl.n_in_x}, {f_nl.n_in_u}) -> {f_nl.n_out}."
            )
        if (l_nl.n_in_x, l_nl.n_in_u, l_nl.n_out) != (n, m, 1):
            raise ValueError(
                f"`l_nl` must map (n={n}, m={m}) to 1 output, got "
                f"({l_nl.n_in_x}, {l_nl.n_in_u}) -> {l_nl.n_out}."
            )
        object.__setattr__(self, "f_nl", f_nl)
        object.__setattr__(self, "l_nl", l_nl)

        epsilon = float(self.epsilon)
        if not (np.isfinite(epsilon) and epsilon > 0):
            raise ValueError(f"`epsilon` must be positive, got {self.epsilon}.")
        object.__setattr__(self, "epsilon", epsilon)

    @property
    def is_linear_quadratic(self) -> bool:
        """True if there are no nonlinear terms."""
        return self.f_nl.is_zero and self.l_nl.is_zero

    @property
    def has_cross_term(self) -> bool:
        """True if S is not identically zero."""
        return bool(np.any(self.S))

    def dynamics(self, x, u) -> np.ndarray:
        """Evaluate f(x, u) over leading axes."""
        return apply_matrix(self.A, x) + apply_matrix(self.B, u) + self.f_nl.evaluate(x, u)

    def stage_cost(self, x, u) -> np.ndarray:
        """Evaluate l(x, u) over leading axes."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        quad = (
            0.5 * (x * apply_matrix(self.Q, x)).sum(axis=-1)
            + (x * apply_matrix(self.S, u)).sum(axis=-1)
            + 0.5 * (u * apply_matrix(self.R, u)).sum(axis=-1)
        )
        return quad + self.l_nl.evaluate(x, u)[..., 0]

    def with_epsilon(self, epsilon: float) -> Problem:
        """Return a copy with a different locality radius."""
        return replace(self, epsilon=epsilon)

    def to_dict(self) -> dict:
        """
        Return the problem in config form (nested lists and term records).

        Raises
        ------
        ValueError
            If the nonlinear terms carry a control shift from cross-term elimination.
        """
        if self.f_nl.control_shift is not None or self.l_nl.control_shift is not None:
            raise ValueError("A problem with an eliminated cross term has no config form.")
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "S": self.S.tolist(),
            "f_nl": self.f_nl.to_list(),
            "l_nl": self.l_nl.to_list()[0],
            "epsilon": self.epsilon,
        }


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_problem`; `failures` names each failed check."""

    checks: dict[str, bool]
    failures: list[str]

    @property
    def passed(self) -> bool:
        """True if no check failed."""
        return not self.failures


def _unstable_modes_covered(
    A: np.ndarray, C: np.ndarray, rank_tol: float, stack: str
) -> bool:
    n = A.shape[0]
    for mu in np.linalg.eigvals(A):
        if abs(mu) < 1.0:
            continue
        shifted = mu * np.eye(n) - A
        test = np.hstack([shifted, C]) if stack == "columns" else np.vstack([shifted, C])
        if numerical_rank(test, rank_tol) < n:
            return False
    return True


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(symmetrize(M))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def validate_problem(prob: Problem, rank_tol: float = 1e-10) -> ValidationReport:
    """
    Check the standing assumptions of the problem.

    The checks are: R symmetric positive definite, Q symmetric, the joint weight
    [[Q, S], [S', R]] positive semidefinite, (A, B) stabilizable and
    (A, Q^{1/2}) detectable. Stabilizability and detectability use the
    eigenvector rank test on every eigenvalue of modulus at least one; with a
    cross term the detectability test runs on the eliminated pair.

    Parameters
    ----------
    prob
        The control problem.
    rank_tol
        Singular values below `rank_tol` times the largest count as zero.

    Returns
    -------
    The validation report. This function never raises for a constructed problem.

    Example
    -------
    >>> report = validate_problem(Problem(A=[[2.0]], B=[[0.0]], Q=[[1.0]], R=[[1.0]]))
    >>> report.failures
    ['(A, B) stabilizable']
    """
    checks: dict[str, bool] = {}
    scale_R = max(1.0, float(np.abs(prob.R).max()))
    R_sym = bool(np.abs(prob.R - prob.R.T).max() <= 1e-12 * scale_R)
    checks["R symmetric positive definite"] = R_sym and bool(
        np.linalg.eigvalsh(symmetrize(prob.R)).min() > 0.0
    )
    scale_Q = max(1.0, float(np.abs(prob.Q).max()))
    checks["Q symmetric"] = bool(np.abs(prob.Q - prob.Q.T).max() <= 1e-12 * scale_Q)

    joint = np.block([[prob.Q, prob.S], [prob.S.T, prob.R]])
    scale_J = max(1.0, float(np.abs(joint).max()))
    checks["[[Q, S], [S', R]] positive semidefinite"] = bool(
        np.linalg.eigvalsh(symmetrize(joint)).min() >= -1e-12 * scale_J
    )
    checks["(A, B) stabilizable"] = _unstable_modes_covered(
        prob.A, prob.B, rank_tol, "columns"
    )

    A_det, Q_det = prob.A, prob.Q
    if prob.has_cross_term and checks["R symmetric positive definite"]:
        reduced = eliminate_cross_term(prob)
        A_det, Q_det = reduced.A, reduced.Q
    checks["(A, Q^1/2) detectable"] = _unstable_modes_covered(
        A_det, _psd_sqrt(Q_det), rank_tol, "rows"
    )

    failures = [name for name, ok in checks.items() if not ok]
    if failures:
        logger.warning(f"Problem validation failed: {', '.join(failures)}.")
    else:
        logger.info("Problem validation passed.")
    return ValidationReport(checks=checks, failures=failures)


def eliminate_cross_term(prob: Problem) -> Problem:
    """
    Remove the state/control cross weight by the change of control ``u = v - R^{-1}S'x``.

    The returned problem has ``A - B R^{-1} S'``, ``Q - S R^{-1} S'``, S = 0 and the
    nonlinear terms composed with the control shift, and the same optimal cost.
    A problem without cross term is returned unchanged, so the operation is
    idempotent.

    Parameters
    ----------
    prob
        The control problem.

    Returns
    -------
    The equivalent problem with S = 0.

    Raises
    ------
    numpy.linalg.LinAlgError
        If R is singular.
    """
    if not prob.has_cross_term:
        return prob
    C = -np.linalg.solve(prob.R, prob.S.T)
    logger.debug("Eliminating the state/control cross term.")
    return Problem(
        A=prob.A + prob.B @ C,
        B=prob.B,
        Q=symmetrize(prob.Q + prob.S @ C),
        R=prob.R,
        S=np.zeros_like(prob.S),
        f_nl=prob.f_nl.shifted(C),
        l_nl=prob.l_nl.shifted(C),
        epsilon=prob.epsilon,
    )
