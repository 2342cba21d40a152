"""Eigenstructure and symplectic structure of the bidirectional dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from loguru import logger

from dtmanifold.pp import Problem
from dtmanifold.tl._pmp import BidirectionalPoint, reduced_hamiltonian_hessian

# smallest singular value of H_lx, relative to the Hessian scale, below which
# the forward tangent map is treated as singular
FORWARD_STEP_RCOND = 1e-2


@dataclass
class PencilSpectrum:
    """
    Eigenvalues of the linearized bidirectional dynamics.

    Attributes
    ----------
    finite_eigs
        Finite eigenvalues, zero eigenvalues included (complex array).
    zero_count
        Number of eigenvalues classified as zero.
    infinite_count
        Number of infinite eigenvalues.
    finite_vectors
        Eigenvectors (dx, dlambda) as columns, aligned with `finite_eigs`.
    zero_mask
        Boolean mask of `finite_eigs` classified as zero.
    """

    finite_eigs: np.ndarray
    zero_count: int = 0
    infinite_count: int = 0
    finite_vectors: np.ndarray | None = None
    zero_mask: np.ndarray | None = None

    def __post_init__(self):
        self.finite_eigs = np.asarray(self.finite_eigs, dtype=complex)
        if self.zero_mask is None:
            self.zero_mask = np.zeros(self.finite_eigs.shape, dtype=bool)
        self.zero_mask = np.asarray(self.zero_mask, dtype=bool)

    @property
    def nonzero_eigs(self) -> np.ndarray:
        """Finite eigenvalues not classified as zero."""
        return self.finite_eigs[~self.zero_mask]


@dataclass
class ReciprocityReport:
    """Outcome of :func:`reciprocity_check`."""

    reciprocal: bool
    balanced: bool
    hyperbolic: bool
    max_mismatch: float
    failures: list[str] = field(default_factory=list)
    ambiguous: list[complex] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """True if every check passed."""
        return not self.failures


@dataclass
class TangentPair:
    """
    Two tangent vectors of length 2n.

    In :func:`invariance_check` each vector is ``(dx, dlambda_plus)``; in
    :func:`propagate_tangents` it is ``(dx, dlambda)``.
    """

    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.v.shape != self.w.shape or self.v.ndim != 1 or self.v.size % 2:
            raise ValueError(
                f"Tangent vectors must be two equal 2n-vectors, got {self.v.shape} and {self.w.shape}."
            )
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.w))):
            raise ValueError("Tangent vectors must be finite.")


@dataclass
class InvarianceResult:
    """Two-form before and after one step of the tangent dynamics."""

    omega: float
    omega_plus: float
    error: float
    passed: bool


def _require_no_cross_term(prob: Problem):
    if prob.has_cross_term:
        raise ValueError("`prob` has a cross term S; run eliminate_cross_term first.")


def pencil_matrices(prob: Problem) -> tuple[np.ndarray, np.ndarray]:
    """
    Matrices of the pencil ``L v = mu M v`` of the linearized bidirectional dynamics.

    ``L = [[A, 0], [Q, -I]]`` and ``M = [[I, B R^{-1} B'], [0, -A']]``: an
    eigenvector ``(dx, dlambda)`` with ``dx+ = mu dx`` and ``dlambda+ = mu dlambda``
    solves the linearized equations.

    Parameters
    ----------
    prob
        The control problem with S = 0.
    """
    _require_no_cross_term(prob)
    n = prob.n
    G_B = prob.B @ np.linalg.solve(prob.R, prob.B.T)
    identity = np.eye(n)
    L = np.block([[prob.A, np.zeros((n, n))], [prob.Q, -identity]])
    M = np.block([[identity, G_B], [np.zeros((n, n)), -prob.A.T]])
    return L, M


def pencil_eigenvalues(
    prob: Problem, zero_tol: float = 1e-10, infinite_tol: float = 1e-12
) -> PencilSpectrum:
    """
    Solve the generalized eigenproblem of the bidirectional dynamics.

    Eigenvalues come from :func:`scipy.linalg.eig` in homogeneous form
    ``(alpha, beta)``. After normalizing each pair to unit length, ``|beta| <
    infinite_tol`` marks an infinite eigenvalue; a finite ``mu = alpha / beta``
    with ``|mu| < zero_tol`` is a zero eigenvalue.

    Parameters
    ----------
    prob
        The control problem with S = 0.
    zero_tol
        Threshold below which a finite eigenvalue counts as zero.
    infinite_tol
        Threshold on the normalized beta below which an eigenvalue is infinite.

    Returns
    -------
    The classified spectrum.

    Raises
    ------
    ValueError
        If the pencil is degenerate (alpha and beta vanish together).

    Example
    -------
    >>> prob = Problem(A=[[0.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
    >>> spec = pencil_eigenvalues(prob)
    >>> spec.zero_count, spec.infinite_count
    (1, 1)
    """
    L, M = pencil_matrices(prob)
    w, vr = scipy.linalg.eig(L, M, right=True, homogeneous_eigvals=True)
    alpha, beta = w
    norm = np.hypot(np.abs(alpha), np.abs(beta))
    if np.any(norm < infinite_tol):
        raise ValueError("Degenerate pencil: L and M are singular on a common kernel.")
    alpha, beta = alpha / norm, beta / norm
    infinite = np.abs(beta) < infinite_tol
    finite_idx = np.flatnonzero(~infinite)
    mu = alpha[finite_idx] / beta[finite_idx]
    zero_mask = np.abs(mu) < zero_tol
    vectors = vr[:, finite_idx]
    order = np.argsort(np.abs(mu), kind="stable")
    spectrum = PencilSpectrum(
        finite_eigs=mu[order],
        zero_count=int(zero_mask.sum()),
        infinite_count=int(infinite.sum()),
        finite_vectors=vectors[:, order],
        zero_mask=zero_mask[order],
    )
    logger.info(
        f"Pencil spectrum: {len(mu) - spectrum.zero_count} finite nonzero, "
        f"{spectrum.zero_count} zero, {spectrum.infinite_count} infinite eigenvalues."
    )
    return spectrum


def eigenpair_residuals(prob: Problem, spec: PencilSpectrum) -> np.ndarray:
    """
    Relative residuals ``|Lv - mu M v| / ((|L| + |mu| |M|) |v|)`` of the finite eigenpairs.

    Parameters
    ----------
    prob
        The control problem with S = 0.
    spec
        Spectrum with eigenvectors, from :func:`pencil_eigenvalues`.
    """
    if spec.finite_vectors is None:
        raise ValueError("`spec` carries no eigenvectors.")
    L, M = pencil_matrices(prob)
    norm_L, norm_M = np.linalg.norm(L, 2), np.linalg.norm(M, 2)
    V = spec.finite_vectors
    mu = spec.finite_eigs
    residual = np.linalg.norm(L @ V - (M @ V) * mu, axis=0)
    scale = (norm_L + np.abs(mu) * norm_M) * np.linalg.norm(V, axis=0)
    return residual / scale


def reciprocity_check(
    spec: PencilSpectrum, tol: float = 1e-8, hyperbolicity_tol: float = 1e-8
) -> ReciprocityReport:
    """
    Check the reciprocal symmetry and hyperbolicity of a pencil spectrum.

    Finite nonzero eigenvalues are paired greedily, in order of increasing
    modulus, with the nearest unused eigenvalue to their reciprocal (relative
    distance at most `tol`). Pairings where a second candidate also lies within
    tolerance are reported as ambiguous rather than resolved silently.

    Parameters
    ----------
    spec
        The spectrum.
    tol
        Relative tolerance of the reciprocal matching.
    hyperbolicity_tol
        Eigenvalues with ``||mu| - 1| <= hyperbolicity_tol`` break hyperbolicity.

    Returns
    -------
    The report; `failures` lists each failed check.

    Example
    -------
    >>> reciprocity_check(PencilSpectrum([0.5, 3.0])).reciprocal
    False
    """
    mu = spec.nonzero_eigs
    order = np.argsort(np.abs(mu), kind="stable")
    unused = list(order)
    max_mismatch = 0.0
    reciprocal = True
    ambiguous: list[complex] = []
    while unused:
        i = unused.pop(0)
        target = 1.0 / mu[i]
        if not unused:
            reciprocal = False
            max_mismatch = np.inf
            break
        candidates = np.array(unused)
        distance = np.abs(mu[candidates] - target) / np.abs(target)
        best = int(np.argmin(distance))
        if distance[best] > tol:
            reciprocal = False
            max_mismatch = max(max_mismatch, float(distance[best]))
            continue
        if np.sum(distance <= tol) > 1:
            ambiguous.append(complex(mu[i]))
        max_mismatch = max(max_mismatch, float(distance[best]))
        unused.remove(candidates[best])

    balanced = spec.zero_count == spec.infinite_count
    hyperbolic = not np.any(np.abs(np.abs(mu) - 1.0) <= hyperbolicity_tol)

    failures = []
    if not reciprocal:
        failures.append("finite nonzero eigenvalues closed under reciprocal")
    if not balanced:
        failures.append("zero_count equals infinite_count")
    if not hyperbolic:
        failures.append("hyperbolicity (no eigenvalue on the unit circle)")
    if ambiguous:
        logger.warning(f"Ambiguous reciprocal pairing for eigenvalues {ambiguous}.")
    return ReciprocityReport(
        reciprocal=reciprocal,
        balanced=balanced,
        hyperbolic=hyperbolic,
        max_mismatch=max_mismatch,
        failures=failures,
        ambiguous=ambiguous,
    )


def stable_subspace_graph(prob: Problem, spec: PencilSpectrum) -> np.ndarray:
    """
    Graph matrix of the stable eigenspace.

    The eigenvectors with ``|mu| < 1`` (zero eigenvalues included) are stacked as
    ``[X; Lambda]`` and the graph matrix ``Lambda X^{-1}`` is returned. For a
    hyperbolic problem it equals the DTARE solution P.

    Parameters
    ----------
    prob
        The control problem.
    spec
        Spectrum with eigenvectors.

    Raises
    ------
    ValueError
        If the stable eigenvectors do not form an n-dimensional graph.
    """
    n = prob.n
    if spec.finite_vectors is None:
        raise ValueError("`spec` carries no eigenvectors.")
    stable = np.abs(spec.finite_eigs) < 1.0
    if stable.sum() != n:
        raise ValueError(f"Expected {n} stable eigenvalues, found {int(stable.sum())}.")
    V = spec.finite_vectors[:, stable]
    X, Lam = V[:n], V[n:]
    graph = np.linalg.solve(X.T, Lam.T).T
    if np.abs(graph.imag).max() > 1e-8 * (1.0 + np.abs(graph.real).max()):
        raise ValueError("Stable eigenspace graph is not real.")
    return graph.real


def symplectic_form(v, w) -> float:
    """
    Canonical two-form ``v' J w`` with ``J = [[0, I], [-I, 0]]``.

    Parameters
    ----------
    v, w
        Vectors ``(dx, dlambda)`` of equal even length.

    Example
    -------
    >>> symplectic_form([1.0, 0.0], [0.0, 1.0])
    1.0
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape != w.shape or v.shape[-1] % 2:
        raise ValueError(f"`v` and `w` must be equal 2n-vectors, got {v.shape} and {w.shape}.")
    n = v.shape[-1] // 2
    value = (v[..., :n] * w[..., n:]).sum(axis=-1) - (v[..., n:] * w[..., :n]).sum(axis=-1)
    return float(value) if value.ndim == 0 else value


def bidirectional_tangent_step(
    prob: Problem, x, lambda_plus, dx, dlambda_plus
) -> tuple[np.ndarray, np.ndarray]:
    """
    Tangent dynamics in bidirectional form: ``(dx, dlambda+) -> (dx+, dlambda)``.

    Parameters
    ----------
    prob
        The control problem.
    x, lambda_plus
        Base point.
    dx, dlambda_plus
        Tangent inputs.

    Returns
    -------
    (dx_plus, dlambda).
    """
    H_xx, H_lx, H_ll = reduced_hamiltonian_hessian(prob, BidirectionalPoint(x, lambda_plus))
    dx = np.asarray(dx, dtype=float)
    dlambda_plus = np.asarray(dlambda_plus, dtype=float)
    dx_plus = H_lx @ dx + H_ll @ dlambda_plus
    dlambda = H_xx @ dx + H_lx.T @ dlambda_plus
    return dx_plus, dlambda


def tangent_step(prob: Problem, x, lambda_plus, v) -> np.ndarray:
    """
    Tangent dynamics in forward form: ``(dx, dlambda) -> (dx+, dlambda+)``.

    Solves ``dlambda = H_xx dx + H_lx' dlambda+`` for ``dlambda+`` and then
    ``dx+ = H_lx dx + H_ll dlambda+``, with the second partials of the reduced
    Hamiltonian at ``(x, u*(x, lambda+), lambda+)``.

    Parameters
    ----------
    prob
        The control problem.
    x, lambda_plus
        Base point (single point).
    v
        Tangent vector ``(dx, dlambda)`` of length 2n.

    Returns
    -------
    The propagated vector ``(dx+, dlambda+)``.

    Raises
    ------
    numpy.linalg.LinAlgError
        If ``H_lx`` is singular or nearly so (for example a singular A at the
        origin); the forward map then amplifies round-off past what the two-form
        check can resolve.
    """
    n = prob.n
    v = np.asarray(v, dtype=float)
    if v.shape != (2 * n,):
        raise ValueError(f"`v` must have shape {(2 * n,)}, got {v.shape}.")
    H_xx, H_lx, H_ll = reduced_hamiltonian_hessian(prob, BidirectionalPoint(x, lambda_plus))
    dx, dlambda = v[:n], v[n:]
    scale = 1.0 + max(np.linalg.norm(H, 2) for H in (H_xx, H_lx, H_ll))
    if np.linalg.svd(H_lx, compute_uv=False)[-1] <= FORWARD_STEP_RCOND * scale:
        raise np.linalg.LinAlgError("Tangent step is singular: H_lx is not invertible.")
    dlambda_plus = np.linalg.solve(H_lx.T, dlambda - H_xx @ dx)
    dx_plus = H_lx @ dx + H_ll @ dlambda_plus
    return np.concatenate([dx_plus, dlambda_plus])


def invariance_check(
    prob: Problem, x, lambda_plus, pair: TangentPair, tol: float = 1e-10
) -> InvarianceResult:
    """
    Check that one step of the tangent dynamics preserves the two-form.

    Each vector of `pair` is read as ``(dx, dlambda+)`` and mapped by
    :func:`bidirectional_tangent_step`; the form of ``(dx, dlambda)`` pairs is
    compared with the form of ``(dx+, dlambda+)`` pairs. The bidirectional form
    needs no inversion, so singular A is admitted.

    Parameters
    ----------
    prob
        The control problem.
    x, lambda_plus
        Base point.
    pair
        Tangent inputs.
    tol
        Pass when ``|omega - omega_plus| <= tol * (1 + |omega|)``.
    """
    n = prob.n
    vx_plus, v_lambda = bidirectional_tangent_step(prob, x, lambda_plus, pair.v[:n], pair.v[n:])
    wx_plus, w_lambda = bidirectional_tangent_step(prob, x, lambda_plus, pair.w[:n], pair.w[n:])
    omega = symplectic_form(
        np.concatenate([pair.v[:n], v_lambda]), np.concatenate([pair.w[:n], w_lambda])
    )
    omega_plus = symplectic_form(
        np.concatenate([vx_plus, pair.v[n:]]), np.concatenate([wx_plus, pair.w[n:]])
    )
    error = abs(omega - omega_plus)
    return InvarianceResult(
        omega=omega,
        omega_plus=omega_plus,
        error=error,
        passed=bool(error <= tol * (1.0 + abs(omega))),
    )


def propagate_tangents(prob: Problem, points: BidirectionalPoint, pair: TangentPair) -> np.ndarray:
    """
    Propagate a tangent pair along a trajectory and record the change of the two-form.

    Before every step both vectors are rescaled to unit norm (the forward map
    expands along the unstable direction); the step then maps ``(dx, dlambda)``
    to ``(dx+, dlambda+)`` with :func:`tangent_step`.

    Parameters
    ----------
    prob
        The control problem.
    points
        States and next costates along the trajectory, each of shape (steps, n).
    pair
        Initial tangent vectors ``(dx, dlambda)``.

    Returns
    -------
    Per-step relative errors ``|omega - omega_plus| / (1 + |omega|)``.
    """
    xs = np.atleast_2d(np.asarray(points.x, dtype=float))
    lambda_pluses = np.atleast_2d(np.asarray(points.lambda_plus, dtype=float))
    if xs.shape != lambda_pluses.shape:
        raise ValueError("`points.x` and `points.lambda_plus` must have the same shape.")
    v, w = pair.v.copy(), pair.w.copy()
    errors = np.zeros(len(xs))
    for k, (x, lam) in enumerate(zip(xs, lambda_pluses)):
        v = v / np.linalg.norm(v)
        w = w / np.linalg.norm(w)
        omega = symplectic_form(v, w)
        v = tangent_step(prob, x, lam, v)
        w = tangent_step(prob, x, lam, w)
        errors[k] = abs(omega - symplectic_form(v, w)) / (1.0 + abs(omega))
    return errors
