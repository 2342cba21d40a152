import numpy as np
import pytest

import dtmanifold
from dtmanifold.tl import BidirectionalPoint, PencilSpectrum, TangentPair

from ._utils import P1_ACL, p0, p1, p2, planar, random_problem, scalar_problem


def test_pencil_eigenvalues_p1():
    spec = dtmanifold.tl.pencil_eigenvalues(p1())
    assert (spec.zero_count, spec.infinite_count) == (0, 0)
    np.testing.assert_allclose(spec.finite_eigs.real, [P1_ACL, 1.0 / P1_ACL], rtol=1e-6)
    np.testing.assert_allclose(spec.finite_eigs.imag, 0.0, atol=1e-12)


def test_pencil_eigenvalues_degenerate_a():
    spec = dtmanifold.tl.pencil_eigenvalues(p0())
    assert (spec.zero_count, spec.infinite_count) == (1, 1)
    assert spec.nonzero_eigs.size == 0
    report = dtmanifold.tl.reciprocity_check(spec)
    assert report.passed


def test_pencil_requires_no_cross_term():
    with pytest.raises(ValueError, match="cross term"):
        dtmanifold.tl.pencil_matrices(scalar_problem(s=0.2))


def test_pencil_unit_circle_is_not_hyperbolic():
    spec = dtmanifold.tl.pencil_eigenvalues(scalar_problem(a=1.0, b=0.0, q=0.0))
    np.testing.assert_allclose(spec.finite_eigs, [1.0, 1.0], atol=1e-14)
    report = dtmanifold.tl.reciprocity_check(spec)
    assert report.reciprocal
    assert not report.hyperbolic
    assert report.failures == ["hyperbolicity (no eigenvalue on the unit circle)"]


def test_reciprocity_check_unit_circle_spectrum():
    report = dtmanifold.tl.reciprocity_check(PencilSpectrum([np.exp(0.3j), np.exp(-0.3j)]))
    assert report.reciprocal
    assert not report.hyperbolic


def test_reciprocity_and_stable_subspace_on_random_problems():
    rng = np.random.default_rng(42)
    for k in range(100):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, n + 1))
        prob = random_problem(rng, n, m, singular_a=k < 25)
        spec = dtmanifold.tl.pencil_eigenvalues(prob)
        report = dtmanifold.tl.reciprocity_check(spec)
        assert report.reciprocal, f"problem {k}: {spec.finite_eigs}"
        assert spec.zero_count == spec.infinite_count
        if k < 25:
            assert spec.zero_count >= 1
        assert report.hyperbolic
        assert dtmanifold.tl.eigenpair_residuals(prob, spec).max() <= 1e-9

        P = dtmanifold.tl.solve_dtare(prob).P
        graph = dtmanifold.tl.stable_subspace_graph(prob, spec)
        assert np.abs(graph - P).max() <= 1e-8 * (1.0 + np.abs(P).max())


def test_reciprocity_check_reports_failures():
    assert not dtmanifold.tl.reciprocity_check(PencilSpectrum([0.5, 3.0])).reciprocal
    report = dtmanifold.tl.reciprocity_check(
        PencilSpectrum([0.0, 0.5, 2.0], zero_count=1, zero_mask=[True, False, False])
    )
    assert report.reciprocal
    assert not report.balanced
    assert report.failures == ["zero_count equals infinite_count"]


def test_reciprocity_check_flags_ambiguous_pairs():
    report = dtmanifold.tl.reciprocity_check(PencilSpectrum([0.5, 0.5, 2.0, 2.0]))
    assert report.reciprocal
    assert report.ambiguous == [0.5]


def test_stable_subspace_graph_planar():
    prob = planar()
    spec = dtmanifold.tl.pencil_eigenvalues(prob)
    P = dtmanifold.tl.solve_dtare(prob).P
    np.testing.assert_allclose(dtmanifold.tl.stable_subspace_graph(prob, spec), P, atol=1e-10)


def test_symplectic_form():
    assert dtmanifold.tl.symplectic_form([1.0, 0.0], [0.0, 1.0]) == 1.0
    v = np.array([1.0, 2.0, 3.0, 4.0])
    assert dtmanifold.tl.symplectic_form(v, v) == 0.0
    with pytest.raises(ValueError):
        dtmanifold.tl.symplectic_form([1.0, 0.0, 1.0], [0.0, 1.0, 0.0])


def test_tangent_pair_validation():
    with pytest.raises(ValueError):
        TangentPair(np.ones(2), np.ones(4))
    with pytest.raises(ValueError):
        TangentPair(np.ones(3), np.ones(3))
    with pytest.raises(ValueError, match="finite"):
        TangentPair(np.array([np.nan, 1.0]), np.ones(2))


@pytest.mark.parametrize("builder", [p2, p0, planar])
def test_invariance_check_random_pairs(builder):
    prob = builder()
    n = prob.n
    rng = np.random.default_rng(3)
    for _ in range(50):
        x, lambda_plus = rng.uniform(-prob.epsilon, prob.epsilon, size=(2, n))
        pair = TangentPair(rng.standard_normal(2 * n), rng.standard_normal(2 * n))
        result = dtmanifold.tl.invariance_check(prob, x, lambda_plus, pair)
        assert result.passed
        assert result.error <= 1e-10 * (1.0 + abs(result.omega))


def test_bidirectional_tangent_step_is_linearization():
    prob = p2()
    x, lam = np.array([0.05]), np.array([0.08])
    dx_plus, dlambda = dtmanifold.tl.bidirectional_tangent_step(prob, x, lam, [1.0], [0.0])
    # u* = -lambda+: x+ = 0.5 x - lambda+ + 0.1 x^2, lambda = x + 0.5 lambda+ + 0.2 x lambda+
    np.testing.assert_allclose(dx_plus, [0.5 + 0.2 * 0.05])
    np.testing.assert_allclose(dlambda, [1.0 + 0.2 * 0.08])


def test_tangent_step_singular_at_degenerate_origin():
    with pytest.raises(np.linalg.LinAlgError):
        dtmanifold.tl.tangent_step(p0(), np.zeros(1), np.zeros(1), np.array([1.0, 0.0]))


def test_propagate_tangents_along_linear_trajectory():
    prob = planar()
    sol = dtmanifold.tl.solve_dtare(prob)
    x = [np.array([0.05, -0.03])]
    for _ in range(20):
        x.append(sol.closed_loop @ x[-1])
    x = np.array(x)
    points = BidirectionalPoint(x[:-1], x[1:] @ sol.P.T)
    rng = np.random.default_rng(5)
    for _ in range(50):
        pair = TangentPair(rng.standard_normal(4), rng.standard_normal(4))
        errors = dtmanifold.tl.propagate_tangents(prob, points, pair)
        assert errors.shape == (20,)
        assert errors.max() <= 1e-10


@pytest.mark.slow
def test_propagate_tangents_along_nonlinear_rollout():
    sol = dtmanifold.tl.solve_manifold(p2(0.2), resolution=21)
    traj = dtmanifold.tl.rollout(
        sol.problem, sol.P, sol.K, sol.psi, np.array([0.08]), horizon=20
    )
    x, x_plus = traj.states[:-1], traj.states[1:]
    lambda_plus = dtmanifold.tl.phi_eval(sol, x_plus)
    points = BidirectionalPoint(x, lambda_plus)
    rng = np.random.default_rng(11)
    for _ in range(2):
        pair = TangentPair(rng.standard_normal(2), rng.standard_normal(2))
        errors = dtmanifold.tl.propagate_tangents(sol.problem, points, pair)
        assert errors.shape == (20,)
        assert errors.max() <= 1e-10
