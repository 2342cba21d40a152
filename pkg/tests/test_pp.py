import numpy as np
import pytest

import dtmanifold
from dtmanifold.pp import MonomialTerm, PolyMap, Problem

from ._utils import p1, p2, planar, scalar_problem


def test_poly_eval_matches_closed_form():
    p = PolyMap(
        2,
        1,
        2,
        (
            (MonomialTerm(0.1, (0, 2), (0,)), MonomialTerm(-1.5, (1, 0), (2,))),
            (MonomialTerm(0.2, (1, 1), (0,)),),
        ),
    )
    x = np.array([[0.3, -0.2], [1.0, 2.0]])
    u = np.array([[0.5], [-1.0]])
    values, jac = dtmanifold.pp.poly_eval(p, x, u, jacobian=True)

    expected = np.stack(
        [0.1 * x[:, 1] ** 2 - 1.5 * x[:, 0] * u[:, 0] ** 2, 0.2 * x[:, 0] * x[:, 1]],
        axis=-1,
    )
    np.testing.assert_allclose(values, expected, rtol=1e-14)
    assert jac.shape == (2, 2, 3)
    np.testing.assert_allclose(jac[:, 0, 0], -1.5 * u[:, 0] ** 2)
    np.testing.assert_allclose(jac[:, 0, 1], 0.2 * x[:, 1])
    np.testing.assert_allclose(jac[:, 0, 2], -3.0 * x[:, 0] * u[:, 0])
    np.testing.assert_allclose(jac[:, 1, 0], 0.2 * x[:, 1])
    np.testing.assert_allclose(jac[:, 1, 1], 0.2 * x[:, 0])


def _random_poly(rng, n, m):
    components = []
    for _ in range(n):
        terms = []
        for _ in range(int(rng.integers(1, 4))):
            exponents = np.zeros(n + m, dtype=int)
            for i in rng.integers(0, n + m, size=int(rng.integers(2, 5))):
                exponents[i] += 1
            terms.append(MonomialTerm(rng.normal(), tuple(exponents[:n]), tuple(exponents[n:])))
        components.append(tuple(terms))
    return PolyMap(n, m, n, tuple(components))


def test_poly_jacobian_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        p = _random_poly(rng, n, m)
        w = rng.uniform(-1.0, 1.0, size=n + m)
        step = 1e-6 * (1.0 + np.linalg.norm(w))
        jac = dtmanifold.pp.poly_eval(p, w[:n], w[n:], jacobian=True)[1]
        for j in range(n + m):
            shift = np.zeros(n + m)
            shift[j] = step
            upper = dtmanifold.pp.poly_eval(p, (w + shift)[:n], (w + shift)[n:])
            lower = dtmanifold.pp.poly_eval(p, (w - shift)[:n], (w - shift)[n:])
            column = (upper - lower) / (2 * step)
            scale = 1.0 + np.abs(jac[:, j]).max()
            assert np.abs(column - jac[:, j]).max() <= 1e-6 * scale


def test_poly_hessian_matches_finite_differences():
    p = PolyMap(1, 1, 1, ((MonomialTerm(0.7, (2,), (1,)), MonomialTerm(0.1, (3,), (0,))),))
    w = np.array([0.4, -0.3])
    h = 1e-6
    hess = p.hessian(w[:1], w[1:])[0]
    for j in range(2):
        shift = np.zeros(2)
        shift[j] = h
        d_jac = (
            p.jacobian((w + shift)[:1], (w + shift)[1:])[0]
            - p.jacobian((w - shift)[:1], (w - shift)[1:])[0]
        ) / (2 * h)
        np.testing.assert_allclose(hess[:, j], d_jac, atol=1e-8)
    np.testing.assert_allclose(hess, hess.T)


def test_poly_rejects_low_degree_terms():
    with pytest.raises(ValueError, match="degree"):
        PolyMap(1, 1, 1, ((MonomialTerm(1.0, (1,), (0,)),),))


def test_poly_drops_zero_terms_and_keeps_origin_flat():
    p = PolyMap(1, 1, 1, ((MonomialTerm(0.0, (2,), (0,)), MonomialTerm(2.0, (1,), (1,))),))
    assert p.n_terms == 1
    assert p.evaluate(np.zeros(1), np.zeros(1))[0] == 0.0
    np.testing.assert_array_equal(p.jacobian(np.zeros(1), np.zeros(1)), 0.0)


def test_poly_control_shift_composes():
    p = PolyMap(1, 1, 1, ((MonomialTerm(1.0, (1,), (1,)),),))
    shifted = p.shifted(np.array([[2.0]])).shifted(np.array([[-0.5]]))
    x, v = np.array([0.3]), np.array([0.7])
    # x * (v + 1.5 x)
    assert shifted.evaluate(x, v)[0] == pytest.approx(0.3 * (0.7 + 1.5 * 0.3))
    jac = shifted.jacobian(x, v)[0]
    np.testing.assert_allclose(jac, [0.7 + 3.0 * 0.3, 0.3])


def test_problem_defaults_and_shapes():
    prob = Problem(A=[[0.5]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
    assert (prob.n, prob.m) == (1, 1)
    assert prob.epsilon == 0.1
    assert prob.is_linear_quadratic
    assert not prob.has_cross_term
    with pytest.raises(ValueError):
        prob.A[0, 0] = 2.0


def test_problem_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="`B`"):
        Problem(A=np.eye(2), B=[[1.0]], Q=np.eye(2), R=[[1.0]])
    with pytest.raises(ValueError, match="`epsilon`"):
        Problem(A=[[0.5]], B=[[1.0]], Q=[[1.0]], R=[[1.0]], epsilon=-1.0)


def test_problem_dynamics_and_cost():
    prob = p2()
    x, u = np.array([0.2]), np.array([-0.1])
    assert prob.dynamics(x, u)[0] == pytest.approx(0.5 * 0.2 - 0.1 + 0.1 * 0.04)
    assert prob.stage_cost(x, u) == pytest.approx(0.5 * 0.04 + 0.5 * 0.01)


def test_validate_problem_passes_p1():
    report = dtmanifold.pp.validate_problem(p1())
    assert report.passed
    assert all(report.checks.values())


def test_validate_problem_flags_unit_circle():
    report = dtmanifold.pp.validate_problem(scalar_problem(a=1.0, b=0.0))
    assert not report.passed
    assert report.failures == ["(A, B) stabilizable"]


def test_validate_problem_flags_indefinite_r():
    report = dtmanifold.pp.validate_problem(scalar_problem(r=-1.0))
    assert "R symmetric positive definite" in report.failures


def test_validate_problem_flags_undetectable():
    report = dtmanifold.pp.validate_problem(scalar_problem(a=2.0, q=0.0))
    assert report.failures == ["(A, Q^1/2) detectable"]


def test_eliminate_cross_term_is_idempotent():
    prob = scalar_problem(s=0.3, f_terms=[MonomialTerm(0.1, (1,), (1,))])
    once = dtmanifold.pp.eliminate_cross_term(prob)
    twice = dtmanifold.pp.eliminate_cross_term(once)
    assert twice is once
    assert not once.has_cross_term
    assert once.A[0, 0] == pytest.approx(0.5 - 0.3)
    assert once.Q[0, 0] == pytest.approx(1.0 - 0.09)

    # same dynamics and cost under u = v - R^{-1} S' x
    x, v = np.array([0.2]), np.array([0.05])
    u = v - 0.3 * x
    np.testing.assert_allclose(once.dynamics(x, v), prob.dynamics(x, u), rtol=1e-14)
    assert once.stage_cost(x, v) == pytest.approx(prob.stage_cost(x, u), rel=1e-14)


def test_eliminate_cross_term_without_s_returns_input():
    prob = planar()
    assert dtmanifold.pp.eliminate_cross_term(prob) is prob


def test_cutoff_profile_shape():
    rho = dtmanifold.pp.cutoff_profile(np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0]))
    np.testing.assert_array_equal(rho[[0, 1, 2]], 1.0)
    np.testing.assert_array_equal(rho[[4, 5]], 0.0)
    assert 0.0 < rho[3] < 1.0
    s = np.linspace(0.0, 3.0, 301)
    assert np.all(np.diff(dtmanifold.pp.cutoff_profile(s)) <= 1e-15)


def test_cutoff_apply_is_identity_inside():
    c = dtmanifold.pp.CutoffProfile(0.1)
    y = np.array([[0.05, -0.05], [0.3, 0.0], [0.12, 0.0]])
    out = dtmanifold.pp.cutoff_apply(y, c)
    np.testing.assert_array_equal(out[0], y[0])
    np.testing.assert_array_equal(out[1], 0.0)
    assert 0.0 < out[2, 0] < 0.12
    with pytest.raises(ValueError):
        dtmanifold.pp.CutoffProfile(0.0)


def test_gronwall_linear_example():
    bound = dtmanifold.pp.gronwall_bounds("linear", 3, delta=0.5, lipschitz=1.0, u0=2.0)
    np.testing.assert_allclose(bound, [2.0, 2.0, 2.0, 2.0])


def test_gronwall_linear_tail_closed_form():
    # unforced bound sums to u0 / (1 - delta), the tail used to truncate apply_T
    bound = dtmanifold.pp.gronwall_bounds("linear", 200, delta=0.3, u0=2.0)
    assert bound.sum() == pytest.approx(2.0 / (1.0 - 0.3), rel=1e-14)
    np.testing.assert_allclose(bound[5:].sum(), bound[5] / (1.0 - 0.3), rtol=1e-12)


def test_gronwall_linear_never_violated():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        delta, lipschitz, u0 = rng.uniform(0.0, 1.5), rng.uniform(0.0, 2.0), rng.uniform(0.0, 5.0)
        k_max = int(rng.integers(1, 30))
        u = np.empty(k_max + 1)
        u[0] = u0
        for k in range(k_max):
            u[k + 1] = delta * u[k] + lipschitz * rng.uniform(0.0, 1.0)
        bound = dtmanifold.pp.gronwall_bounds(
            "linear", k_max, delta=delta, lipschitz=lipschitz, u0=u0
        )
        assert np.all(u <= bound * (1 + 1e-12) + 1e-12)


def test_gronwall_summed_never_violated():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        c1, c2 = rng.uniform(0.0, 1.0), rng.uniform(0.0, 2.0)
        k_max = int(rng.integers(1, 20))
        xi = np.empty(k_max + 1)
        xi[0] = rng.uniform(0.0, c2)
        for k in range(1, k_max + 1):
            xi[k] = rng.uniform(0.0, 1.0) * (c1 * xi[:k].sum() + c2)
        bound = dtmanifold.pp.gronwall_bounds("summed", k_max, c1=c1, c2=c2)
        assert np.all(xi[1:] <= bound[1:] * (1 + 1e-12) + 1e-12)


def test_gronwall_rejects_negative_parameters():
    with pytest.raises(ValueError, match="non-negative"):
        dtmanifold.pp.gronwall_bounds("linear", 3, delta=-0.1)
    with pytest.raises(ValueError, match="kind"):
        dtmanifold.pp.gronwall_bounds("cubic", 3)
