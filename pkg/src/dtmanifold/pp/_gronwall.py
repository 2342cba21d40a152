"""Discrete Gronwall bounds."""

from __future__ import annotations

import numpy as np


def gronwall_bounds(
    kind: str,
    k_max: int,
    *,
    delta: float = 0.0,
    lipschitz: float = 0.0,
    u0: float = 0.0,
    c1: float = 0.0,
    c2: float = 0.0,
) -> np.ndarray:
    """
    Bound sequences from the discrete Gronwall inequalities.

    ``kind="linear"``: if ``u[k+1] <= delta * u[k] + lipschitz`` then
    ``u[k] <= delta**k * u0 + lipschitz * sum_{j<k} delta**(k-1-j)``.

    ``kind="summed"``: if ``|xi[k]| <= c1 * sum_{j<k} |xi[j]| + c2`` then
    ``|xi[k]| <= c2 * sum_{j=1..k} (1 + c1)**j`` for k >= 1.

    Parameters
    ----------
    kind
        Either "linear" or "summed".
    k_max
        Last index of the returned sequence.
    delta, lipschitz, u0
        Parameters of the linear bound.
    c1, c2
        Parameters of the summed bound.

    Returns
    -------
    Array with the bound for k = 0, ..., k_max.

    Example
    -------
    >>> gronwall_bounds("linear", 3, delta=0.5, lipschitz=1.0, u0=2.0)[3]
    2.0
    """
    params = {"delta": delta, "lipschitz": lipschitz, "u0": u0, "c1": c1, "c2": c2}
    negative = [name for name, value in params.items() if value < 0]
    if negative:
        raise ValueError(f"Gronwall parameters must be non-negative: {negative}.")
    if k_max < 0:
        raise ValueError(f"`k_max` must be non-negative, got {k_max}.")

    k = np.arange(k_max + 1)
    if kind == "linear":
        # sum_{j<k} delta^(k-1-j) as a running recurrence
        geometric = np.zeros(k_max + 1)
        for i in range(1, k_max + 1):
            geometric[i] = delta * geometric[i - 1] + 1.0
        return np.power(float(delta), k) * u0 + lipschitz * geometric
    if kind == "summed":
        growth = np.power(1.0 + c1, np.arange(1, k_max + 1))
        return c2 * np.concatenate([[0.0], np.cumsum(growth)])
    raise ValueError(f"Unknown `kind` '{kind}'. Use 'linear' or 'summed'.")
