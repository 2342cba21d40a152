"""Problem builders shared by the tests."""

import numpy as np

from dtmanifold.pp import MonomialTerm, PolyMap, Problem

P1_P = 1.1327822
P1_K = -0.2655705
P1_ACL = 0.2344295


def scalar_problem(
    a: float = 0.5,
    b: float = 1.0,
    q: float = 1.0,
    r: float = 1.0,
    s: float = 0.0,
    f_terms: list[MonomialTerm] | None = None,
    l_terms: list[MonomialTerm] | None = None,
    epsilon: float = 0.1,
) -> Problem:
    """Scalar problem with optional polynomial terms."""
    f_nl = PolyMap(1, 1, 1, (tuple(f_terms or ()),))
    l_nl = PolyMap(1, 1, 1, (tuple(l_terms or ()),))
    return Problem(
        A=[[a]], B=[[b]], Q=[[q]], R=[[r]], S=[[s]], f_nl=f_nl, l_nl=l_nl, epsilon=epsilon
    )


def p1(epsilon: float = 0.1) -> Problem:
    """Linear-quadratic scalar problem a=0.5, b=q=r=1."""
    return scalar_problem(epsilon=epsilon)


def p2(epsilon: float = 0.2) -> Problem:
    """P1 with the dynamics nonlinearity 0.1 x**2."""
    return scalar_problem(f_terms=[MonomialTerm(0.1, (2,), (0,))], epsilon=epsilon)


def p0(epsilon: float = 0.1) -> Problem:
    """Degenerate problem a=0, x+ = u + 0.1 x**2: zero closed-loop eigenvalue."""
    return scalar_problem(a=0.0, f_terms=[MonomialTerm(0.1, (2,), (0,))], epsilon=epsilon)


def golden(epsilon: float = 0.1) -> Problem:
    """a=1 problem with a quadratic nonlinearity; p is the golden ratio."""
    return scalar_problem(a=1.0, f_terms=[MonomialTerm(0.1, (2,), (0,))], epsilon=epsilon)


def planar(epsilon: float = 0.1) -> Problem:
    """Two-state, one-input problem with quadratic couplings."""
    f_nl = PolyMap(
        2,
        1,
        2,
        (
            (MonomialTerm(0.1, (0, 2), (0,)),),
            (MonomialTerm(0.2, (1, 1), (0,)),),
        ),
    )
    return Problem(
        A=[[0.5, 0.1], [0.0, 0.6]],
        B=[[0.0], [1.0]],
        Q=np.eye(2),
        R=[[1.0]],
        f_nl=f_nl,
        epsilon=epsilon,
    )


def random_problem(rng: np.random.Generator, n: int, m: int, singular_a: bool = False) -> Problem:
    """
    Random linear-quadratic problem that is stabilizable and detectable.

    B has full column rank in generic position and Q is positive definite,
    so both assumptions hold almost surely. With `singular_a` one column of A
    is zeroed.
    """
    A = rng.normal(size=(n, n))
    if singular_a:
        A[:, rng.integers(n)] = 0.0
    B = rng.normal(size=(n, m))
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.1 * np.eye(n)
    M = rng.normal(size=(m, m))
    R = M @ M.T + 0.5 * np.eye(m)
    return Problem(A=A, B=B, Q=Q, R=R)


def problem_config(prob_dict: dict, **sections) -> dict:
    """Config document around a problem section."""
    config = {"problem": prob_dict}
    config.update(sections)
    return config


P2_CONFIG = {
    "A": [[0.5]],
    "B": [[1.0]],
    "Q": [[1.0]],
    "R": [[1.0]],
    "f_nl": [[{"coeff": 0.1, "x_exp": [2], "u_exp": [0]}]],
    "epsilon": 0.2,
}
