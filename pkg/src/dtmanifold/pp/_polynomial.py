"""Sparse multivariate polynomial maps used for the nonlinear parts of f and l."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MonomialTerm:
    """
    A single monomial ``coeff * prod(x**x_exponents) * prod(u**u_exponents)``.

    Parameters
    ----------
    coeff
        Finite real coefficient.
    x_exponents
        Non-negative exponents of the state variables.
    u_exponents
        Non-negative exponents of the control variables.
    """

    coeff: float
    x_exponents: tuple[int, ...]
    u_exponents: tuple[int, ...] = ()

    def __post_init__(self):
        coeff = float(self.coeff)
        if not np.isfinite(coeff):
            raise ValueError(f"Monomial `coeff` must be finite, got {self.coeff}.")
        x_exp = tuple(int(e) for e in self.x_exponents)
        u_exp = tuple(int(e) for e in self.u_exponents)
        if any(e < 0 for e in x_exp + u_exp):
            raise ValueError(
                f"Monomial exponents must be non-negative, got {x_exp} / {u_exp}."
            )
        object.__setattr__(self, "coeff", coeff)
        object.__setattr__(self, "x_exponents", x_exp)
        object.__setattr__(self, "u_exponents", u_exp)

    @property
    def degree(self) -> int:
        """Total degree of the monomial."""
        return sum(self.x_exponents) + sum(self.u_exponents)

    def to_dict(self) -> dict:
        """Return the term in config form."""
        return {
            "coeff": self.coeff,
            "x_exp": list(self.x_exponents),
            "u_exp": list(self.u_exponents),
        }


@dataclass(frozen=True, eq=False)
class PolyMap:
    """
    Vector valued sparse polynomial in (x, u), vectorized over leading axes.

    Zero-coefficient terms are dropped on construction. Every term must have total
    degree at least `min_degree` (2 for the nonlinear remainders), so the map and
    its Jacobian vanish at the origin.

    With a `control_shift` C the map is evaluated at ``(x, v + C x)``: the stored
    polynomial is composed with the affine change of control variables instead of
    being expanded.

    Parameters
    ----------
    n_in_x
        Number of state variables.
    n_in_u
        Number of control variables.
    n_out
        Number of output components.
    components
        One sequence of :class:`MonomialTerm` per output component.
    control_shift
        Optional (n_in_u, n_in_x) matrix C.
    min_degree
        Lowest admissible total degree.

    Example
    -------
    >>> p = PolyMap(1, 1, 1, [[MonomialTerm(0.1, (2,), (0,))]])
    >>> p.evaluate(np.array([0.3]), np.array([0.0]))
    array([0.009])
    """

    n_in_x: int
    n_in_u: int
    n_out: int
    components: tuple[tuple[MonomialTerm, ...], ...] = ()
    control_shift: np.ndarray | None = None
    min_degree: int = 2
    _exponents: np.ndarray = field(init=False, repr=False)
    _coeffs: np.ndarray = field(init=False, repr=False)
    _selector: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if min(self.n_in_x, self.n_in_u, self.n_out) < 0:
            raise ValueError("PolyMap dimensions must be non-negative.")
        components = self.components
        if len(components) == 0:
            components = tuple(() for _ in range(self.n_out))
        if len(components) != self.n_out:
            raise ValueError(
                f"Expected {self.n_out} output components, got {len(components)}."
            )
        cleaned = []
        for k, terms in enumerate(components):
            kept = []
            for term in terms:
                if not isinstance(term, MonomialTerm):
                    term = MonomialTerm(**term)
                if len(term.x_exponents) != self.n_in_x or len(
                    term.u_exponents
                ) != self.n_in_u:
                    raise ValueError(
                        f"Term {term} in component {k} does not match dimensions "
                        f"n_in_x={self.n_in_x}, n_in_u={self.n_in_u}."
                    )
                if term.coeff == 0.0:
                    continue
                if term.degree < self.min_degree:
                    raise ValueError(
                        f"Term {term} in component {k} has degree {term.degree} < "
                        f"{self.min_degree}; linear parts belong in the matrices."
                    )
                kept.append(term)
            cleaned.append(tuple(kept))
        object.__setattr__(self, "components", tuple(cleaned))

        if self.control_shift is not None:
            C = np.array(self.control_shift, dtype=float)
            if C.shape != (self.n_in_u, self.n_in_x):
                raise ValueError(
                    f"`control_shift` must have shape {(self.n_in_u, self.n_in_x)}, got {C.shape}."
                )
            C.flags.writeable = False
            object.__setattr__(self, "control_shift", C)

        flat = [(k, t) for k, terms in enumerate(cleaned) for t in terms]
        n_vars = self.n_in_x + self.n_in_u
        exponents = np.zeros((len(flat), n_vars), dtype=int)
        coeffs = np.zeros(len(flat))
        selector = np.zeros((len(flat), self.n_out))
        for i, (k, term) in enumerate(flat):
            exponents[i] = term.x_exponents + term.u_exponents
            coeffs[i] = term.coeff
            selector[i, k] = 1.0
        object.__setattr__(self, "_exponents", exponents)
        object.__setattr__(self, "_coeffs", coeffs)
        object.__setattr__(self, "_selector", selector)

    @property
    def n_terms(self) -> int:
        """Number of stored (nonzero) terms."""
        return len(self._coeffs)

    @property
    def is_zero(self) -> bool:
        """True if the map has no terms."""
        return self.n_terms == 0

    def shifted(self, C: np.ndarray) -> PolyMap:
        """Return the map composed with ``u = v + C x`` (shifts accumulate)."""
        C = np.asarray(C, dtype=float)
        if self.control_shift is not None:
            C = C + self.control_shift
        return PolyMap(
            self.n_in_x,
            self.n_in_u,
            self.n_out,
            self.components,
            control_shift=C,
            min_degree=self.min_degree,
        )

    def _variables(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        if x.shape[-1] != self.n_in_x:
            raise ValueError(
                f"`x` has trailing dimension {x.shape[-1]}, expected {self.n_in_x}."
            )
        if u is None:
            if self.n_in_u > 0:
                raise ValueError(f"`u` is required for a map with n_in_u={self.n_in_u}.")
            u = np.zeros(x.shape[:-1] + (0,))
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            u = u[None]
        if u.shape[-1] != self.n_in_u:
            raise ValueError(
                f"`u` has trailing dimension {u.shape[-1]}, expected {self.n_in_u}."
            )
        lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        x = np.broadcast_to(x, lead + (self.n_in_x,))
        u = np.broadcast_to(u, lead + (self.n_in_u,))
        if self.control_shift is not None:
            u = u + (x[..., None, :] * self.control_shift).sum(axis=-1)
        return np.concatenate([x, u], axis=-1)

    def _chain(self) -> np.ndarray:
        n_vars = self.n_in_x + self.n_in_u
        T = np.eye(n_vars)
        if self.control_shift is not None:
            T[self.n_in_x :, : self.n_in_x] = self.control_shift
        return T

    def _collect(self, per_term: np.ndarray) -> np.ndarray:
        # sum terms into their output components
        return (per_term[..., :, None] * self._selector).sum(axis=-2)

    def evaluate(self, x, u=None) -> np.ndarray:
        """Evaluate the map; returns shape (..., n_out)."""
        w = self._variables(x, u)
        lead = w.shape[:-1]
        if self.is_zero:
            return np.zeros(lead + (self.n_out,))
        monomials = np.prod(w[..., None, :] ** self._exponents, axis=-1)
        return self._collect(monomials * self._coeffs)

    def jacobian(self, x, u=None) -> np.ndarray:
        """Jacobian with respect to (x, u); returns shape (..., n_out, n_in_x + n_in_u)."""
        w = self._variables(x, u)
        lead = w.shape[:-1]
        n_vars = w.shape[-1]
        if self.is_zero:
            return np.zeros(lead + (self.n_out, n_vars))
        E = self._exponents
        reduced = np.maximum(E[:, None, :] - np.eye(n_vars, dtype=int), 0)
        powers = np.prod(w[..., None, None, :] ** reduced, axis=-1)
        dmono = E * powers * self._coeffs[:, None]
        jac = (dmono[..., :, None, :] * self._selector[:, :, None]).sum(axis=-3)
        return jac @ self._chain() if self.control_shift is not None else jac

    def hessian(self, x, u=None) -> np.ndarray:
        """Hessian with respect to (x, u); shape (..., n_out, n_vars, n_vars)."""
        w = self._variables(x, u)
        lead = w.shape[:-1]
        n_vars = w.shape[-1]
        if self.is_zero:
            return np.zeros(lead + (self.n_out, n_vars, n_vars))
        E = self._exponents
        eye = np.eye(n_vars, dtype=int)
        reduced = np.maximum(
            E[:, None, None, :] - eye[None, :, None, :] - eye[None, None, :, :], 0
        )
        factor = E[:, :, None] * (E[:, None, :] - eye[None])
        powers = np.prod(w[..., None, None, None, :] ** reduced, axis=-1)
        d2 = factor * powers * self._coeffs[:, None, None]
        hess = (d2[..., :, None, :, :] * self._selector[:, :, None, None]).sum(axis=-4)
        if self.control_shift is not None:
            T = self._chain()
            hess = T.T @ hess @ T
        return hess

    def to_list(self) -> list[list[dict]]:
        """Return the unshifted terms in config form."""
        return [[t.to_dict() for t in terms] for terms in self.components]


def poly_eval(p: PolyMap, x, u=None, jacobian: bool = False):
    """
    Evaluate a polynomial map, optionally with its Jacobian.

    Parameters
    ----------
    p
        The polynomial map.
    x
        State argument, shape (..., n_in_x).
    u
        Control argument, shape (..., n_in_u). May be omitted when n_in_u == 0.
    jacobian
        If True, also return the Jacobian with respect to (x, u).

    Returns
    -------
    The values, or a tuple (values, jacobian).

    Example
    -------
    >>> p = PolyMap(1, 0, 1, [[MonomialTerm(1.0, (2,))]])
    >>> poly_eval(p, np.array([2.0]))
    array([4.])
    """
    if jacobian:
        return p.evaluate(x, u), p.jacobian(x, u)
    return p.evaluate(x, u)


def terms_from_config(entries: Sequence[dict], n: int, m: int) -> tuple[MonomialTerm, ...]:
    """Build monomials from ``{"coeff", "x_exp", "u_exp"}`` records."""
    terms = []
    for i, entry in enumerate(entries):
        unknown = set(entry) - {"coeff", "x_exp", "u_exp"}
        if unknown:
            raise ValueError(f"Unknown key(s) {sorted(unknown)} in term {i}.")
        if "coeff" not in entry or "x_exp" not in entry:
            raise ValueError(f"Term {i} needs `coeff` and `x_exp`.")
        x_exp = entry["x_exp"]
        u_exp = entry.get("u_exp", [0] * m)
        if len(x_exp) != n or len(u_exp) != m:
            raise ValueError(
                f"Term {i} exponent lengths ({len(x_exp)}, {len(u_exp)}) do not match (n={n}, m={m})."
            )
        terms.append(MonomialTerm(entry["coeff"], tuple(x_exp), tuple(u_exp)))
    return tuple(terms)
