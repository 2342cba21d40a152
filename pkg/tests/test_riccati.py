import numpy as np
import pytest

import dtmanifold
from dtmanifold.utils import ConvergenceError

from ._utils import P1_ACL, P1_K, P1_P, p0, p1, planar, random_problem, scalar_problem


def test_solve_dtare_p1():
    sol = dtmanifold.tl.solve_dtare(p1())
    exact = (0.25 + np.sqrt(0.25**2 + 4.0)) / 2.0
    assert abs(sol.P[0, 0] - exact) <= 1e-9
    assert sol.P[0, 0] == pytest.approx(P1_P, abs=1e-7)
    assert sol.K[0, 0] == pytest.approx(P1_K, abs=1e-7)
    assert sol.alpha == pytest.approx(P1_ACL, abs=1e-7)
    assert sol.closed_loop[0, 0] == pytest.approx(P1_ACL, abs=1e-7)
    assert sol.residual <= 1e-12


def test_solve_dtare_unstable_open_loop():
    sol = dtmanifold.tl.solve_dtare(scalar_problem(a=2.0))
    assert sol.P[0, 0] == pytest.approx(2.0 + np.sqrt(5.0), rel=1e-12)
    assert sol.alpha < 1.0


def test_solve_dtare_degenerate_a():
    sol = dtmanifold.tl.solve_dtare(p0())
    assert sol.P[0, 0] == pytest.approx(1.0, abs=1e-14)
    assert sol.K[0, 0] == pytest.approx(0.0, abs=1e-14)
    assert sol.alpha == pytest.approx(0.0, abs=1e-14)


def test_solve_dtare_golden_ratio():
    sol = dtmanifold.tl.solve_dtare(scalar_problem(a=1.0))
    assert sol.P[0, 0] == pytest.approx((1.0 + np.sqrt(5.0)) / 2.0, rel=1e-12)
    assert sol.closed_loop[0, 0] == pytest.approx(0.381966, abs=1e-6)


def test_solve_dtare_random_problems():
    rng = np.random.default_rng(0)
    for k in range(20):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, n + 1))
        prob = random_problem(rng, n, m, singular_a=k % 4 == 0)
        sol = dtmanifold.tl.solve_dtare(prob)
        scale = 1.0 + np.abs(sol.P).max()
        assert dtmanifold.tl.dtare_residual(prob, sol.P) <= 1e-10 * scale
        assert sol.alpha < 1.0
        np.testing.assert_allclose(sol.P, sol.P.T, atol=0.0)
        assert np.linalg.eigvalsh(sol.P)[0] >= -1e-10 * scale


def test_cross_term_elimination_preserves_p():
    prob = scalar_problem(s=0.3)
    sol = dtmanifold.tl.solve_dtare(dtmanifold.pp.eliminate_cross_term(prob))
    assert dtmanifold.tl.dtare_residual(prob, sol.P) <= 1e-12
    K = dtmanifold.tl.feedback_gain(prob, sol.P)
    # gain of the original problem: reduced gain shifted by -R^{-1} S'
    assert K[0, 0] == pytest.approx(sol.K[0, 0] - 0.3, rel=1e-12)


def test_feedback_gain_closed_loop_identity():
    prob = planar()
    sol = dtmanifold.tl.solve_dtare(prob)
    G_B = prob.B @ np.linalg.solve(prob.R, prob.B.T)
    expected = np.linalg.solve(np.eye(2) + G_B @ sol.P, prob.A)
    np.testing.assert_allclose(sol.closed_loop, expected, atol=1e-12)


def test_lyapunov_check():
    M = dtmanifold.tl.lyapunov_check(np.array([[P1_ACL]]))
    assert M[0, 0] == pytest.approx(1.0 / (1.0 - P1_ACL**2), rel=1e-7)

    Acl = np.array([[0.5, 2.0], [0.0, 0.3]])
    M = dtmanifold.tl.lyapunov_check(Acl)
    np.testing.assert_allclose(Acl.T @ M @ Acl - M, -np.eye(2), atol=1e-10)
    with pytest.raises(ValueError, match="spectral radius"):
        dtmanifold.tl.lyapunov_check(np.array([[1.0]]))


def test_solve_dtare_fails_without_stabilizability():
    with pytest.raises(ConvergenceError):
        dtmanifold.tl.solve_dtare(scalar_problem(a=1.0, b=0.0), max_iter=1000)
