"""Functions tabulated on a tensor grid over the box [-epsilon, epsilon]^n."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from loguru import logger
from scipy.interpolate import NdBSpline, RegularGridInterpolator, make_interp_spline

METHODS = ("cubic", "linear")


@dataclass(eq=False)
class GridFn:
    """
    Vector valued function tabulated at the nodes of a tensor grid.

    The grid has `resolution` nodes per axis at ``epsilon * linspace(-1, 1, resolution)``.
    The resolution is odd, so the origin is a node; its value is pinned to exactly
    zero. Between nodes the function is interpolated with tensor cubic splines
    (``method="cubic"``, not-a-knot end conditions) or multilinearly
    (``method="linear"``); outside the box both extrapolate.

    Parameters
    ----------
    n
        Dimension of the domain.
    epsilon
        Half width of the box.
    resolution
        Odd number of nodes per axis, at least 3.
    values
        Node values of shape ``(resolution,) * n + (n_out,)``, indexed like
        ``numpy.meshgrid(..., indexing="ij")``.
    method
        Interpolation method, "cubic" or "linear". Cubic needs at least 5 nodes
        per axis and falls back to linear otherwise.

    Example
    -------
    >>> psi = GridFn.zeros(n=1, epsilon=0.1, resolution=5, n_out=1)
    >>> psi(np.array([0.03]))
    array([0.])
    """

    n: int
    epsilon: float
    resolution: int
    values: np.ndarray
    method: str = "cubic"
    _interpolant: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"`n` must be positive, got {self.n}.")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"`epsilon` must be positive, got {self.epsilon}.")
        if self.resolution < 3 or self.resolution % 2 == 0:
            raise ValueError(
                f"`resolution` must be odd and at least 3 so that 0 is a node, got {self.resolution}."
            )
        if self.method not in METHODS:
            raise ValueError(f"`method` must be one of {METHODS}, got '{self.method}'.")
        if self.method == "cubic" and self.resolution < 5:
            logger.warning("Cubic interpolation needs 5 nodes per axis; using linear.")
            self.method = "linear"
        values = np.array(self.values, dtype=float)
        expected = (self.resolution,) * self.n
        if values.shape[:-1] != expected or values.ndim != self.n + 1:
            raise ValueError(
                f"`values` must have shape {expected} + (n_out,), got {values.shape}."
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("`values` contains non-finite entries.")
        values[self.origin_index] = 0.0
        values.flags.writeable = False
        self.values = values
        self.epsilon = float(self.epsilon)

    @classmethod
    def zeros(
        cls, n: int, epsilon: float, resolution: int, n_out: int, method: str = "cubic"
    ) -> GridFn:
        """Grid function that vanishes identically."""
        return cls(n, epsilon, resolution, np.zeros((resolution,) * n + (n_out,)), method)

    @classmethod
    def from_function(
        cls,
        func: Callable[[np.ndarray], np.ndarray],
        n: int,
        epsilon: float,
        resolution: int,
        method: str = "cubic",
    ) -> GridFn:
        """
        Tabulate `func` at the grid nodes.

        Parameters
        ----------
        func
            Batched function mapping points (N, n) to values (N, n_out).
        n, epsilon, resolution, method
            Grid description, see :class:`GridFn`.
        """
        template = cls.zeros(n, epsilon, resolution, 1, method)
        values = np.asarray(func(template.points()), dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        return template.with_values(values.reshape(template.values.shape[:-1] + (-1,)))

    @property
    def n_out(self) -> int:
        """Number of output components."""
        return self.values.shape[-1]

    @property
    def axis(self) -> np.ndarray:
        """Node coordinates along one axis; the middle node is exactly 0."""
        nodes = self.epsilon * np.linspace(-1.0, 1.0, self.resolution)
        nodes[self.resolution // 2] = 0.0
        return nodes

    @property
    def spacing(self) -> float:
        """Distance between adjacent nodes."""
        return 2.0 * self.epsilon / (self.resolution - 1)

    @property
    def origin_index(self) -> tuple[int, ...]:
        """Index of the origin node."""
        return (self.resolution // 2,) * self.n

    def points(self) -> np.ndarray:
        """Node coordinates, shape (resolution**n, n), in C order of `values`."""
        mesh = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def flat_values(self) -> np.ndarray:
        """Node values, shape (resolution**n, n_out), aligned with :meth:`points`."""
        return self.values.reshape(-1, self.n_out)

    def with_values(self, values) -> GridFn:
        """Same grid with new node values (flat or shaped); the origin is pinned to 0."""
        values = np.asarray(values, dtype=float)
        shape = (self.resolution,) * self.n + (values.shape[-1],)
        return GridFn(self.n, self.epsilon, self.resolution, values.reshape(shape), self.method)

    def in_domain(self, x) -> np.ndarray:
        """Boolean mask of points inside the closed box."""
        x = np.asarray(x, dtype=float)
        return np.abs(x).max(axis=-1) <= self.epsilon * (1.0 + 1e-12)

    def _build(self):
        axis = self.axis
        if self.method == "linear":
            return RegularGridInterpolator(
                (axis,) * self.n, self.values, method="linear", bounds_error=False, fill_value=None
            )
        coeffs = self.values
        knots = None
        for ax in range(self.n):
            spline = make_interp_spline(axis, coeffs, k=3, axis=ax)
            coeffs = np.moveaxis(spline.c, 0, ax)
            knots = spline.t
        return NdBSpline((knots,) * self.n, coeffs, 3, extrapolate=True)

    def __call__(self, x) -> np.ndarray:
        """
        Interpolate at points of shape (..., n).

        Returns
        -------
        Values of shape (..., n_out). Each point is evaluated independently of
        the others in the batch.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.n,):
            raise ValueError(f"Points need trailing dimension n={self.n}, got {x.shape}.")
        if self._interpolant is None:
            self._interpolant = self._build()
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.n)
        out = np.asarray(self._interpolant(flat)).reshape(lead + (self.n_out,))
        return out

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_interpolant"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)

    @property
    def lipschitz_estimate(self) -> float:
        """Largest difference quotient ``|v_i - v_j| / |x_i - x_j|`` over adjacent nodes."""
        h = self.spacing
        largest = 0.0
        for ax in range(self.n):
            diff = np.linalg.norm(np.diff(self.values, axis=ax), axis=-1)
            if diff.size:
                largest = max(largest, float(diff.max()) / h)
        return largest

    def sup_distance(self, other: GridFn) -> float:
        """Largest Euclidean distance between node values of two grid functions."""
        if self.values.shape != other.values.shape:
            raise ValueError(
                f"Grid functions have different shapes {self.values.shape} and {other.values.shape}."
            )
        return float(np.linalg.norm(self.values - other.values, axis=-1).max())

    def to_frame(self, name: str) -> pd.DataFrame:
        """
        Node table with columns x1..xn followed by the value columns.

        A single output is named `name`; several are named `name1`, `name2`, ...
        """
        columns = {f"x{i + 1}": self.points()[:, i] for i in range(self.n)}
        flat = self.flat_values()
        if self.n_out == 1:
            columns[name] = flat[:, 0]
        else:
            for j in range(self.n_out):
                columns[f"{name}{j + 1}"] = flat[:, j]
        return pd.DataFrame(columns)
