"""Default tolerances and run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from dtmanifold.pp import Problem


class Tolerances(NamedTuple):
    """
    Every tolerance and iteration cap used by the pipeline.

    Library functions take these as keyword arguments with the same defaults;
    :func:`~dtmanifold.tl.run_pipeline` passes the configured values through.
    """

    rank_tol: float = 1e-10
    control_tol: float = 1e-12
    control_max_iter: int = 50
    dtare_tol: float = 1e-13
    dtare_max_iter: int = 100_000
    dtare_residual_tol: float = 1e-10
    lyapunov_tol: float = 1e-12
    lyapunov_residual_tol: float = 1e-9
    stability_margin: float = 1e-8
    zero_eig_tol: float = 1e-10
    infinite_eig_tol: float = 1e-12
    reciprocity_tol: float = 1e-8
    hyperbolicity_tol: float = 1e-8
    eigenpair_tol: float = 1e-9
    graph_tol: float = 1e-8
    symplectic_tol: float = 1e-10
    implicit_tol: float = 1e-12
    implicit_fixed_point_iter: int = 30
    implicit_newton_iter: int = 50
    zero_state_tol: float = 1e-12
    max_horizon: int = 1000
    tail_tol: float = 1e-13
    manifold_tol: float = 1e-11
    manifold_max_iter: int = 200
    max_halvings: int = 6
    certificate_tol: float = 2e-11
    invariance_tol: float = 1e-8
    lipschitz_slack: float = 1e-10
    lipschitz_pairs: int = 10_000
    closedness_constant: float = 10.0
    closedness_floor: float = 1e-6
    quadrature_tol: float = 1e-12
    quadrature_max_order: int = 1024
    path_tol: float = 1e-8
    dpe_tol: float = 1e-6
    gradient_tol: float = 1e-4
    oracle_tol: float = 1e-10
    oracle_max_sweeps: int = 100_000
    oracle_agreement_tol: float = 5e-4

    def to_dict(self) -> dict:
        """Return the tolerances as a plain dictionary."""
        return dict(self._asdict())

    @classmethod
    def from_dict(cls, overrides: dict) -> Tolerances:
        """
        Build tolerances from defaults plus `overrides`.

        Raises
        ------
        ValueError
            If a name is unknown or a value is not a positive number.
        """
        unknown = set(overrides) - set(cls._fields)
        if unknown:
            raise ValueError(f"Unknown tolerance name(s): {sorted(unknown)}.")
        values = {}
        defaults = cls()
        for name, value in overrides.items():
            default = getattr(defaults, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"Tolerance `{name}` must be a number, got {value!r}.")
            if value <= 0:
                raise ValueError(f"Tolerance `{name}` must be positive, got {value}.")
            if isinstance(default, int):
                if int(value) != value:
                    raise ValueError(f"Tolerance `{name}` must be an integer, got {value}.")
                value = int(value)
            else:
                value = float(value)
            values[name] = value
        return cls(**values)


PROFILES = {
    "strict": {},
    "quick": {
        "manifold_tol": 1e-9,
        "certificate_tol": 2e-9,
        "tail_tol": 1e-11,
        "lipschitz_pairs": 1000,
        "oracle_tol": 1e-8,
        "quadrature_tol": 1e-10,
    },
}


def default_tolerances(profile: str = "strict") -> Tolerances:
    """
    Get the tolerances of a named profile.

    Possible profiles are:
    - "strict": the acceptance tolerances
    - "quick": looser stopping rules for exploratory runs

    Parameters
    ----------
    profile
        Name of the profile.

    Returns
    -------
    The tolerances of the profile.

    Example
    -------
    >>> tol = default_tolerances("quick")
    >>> tol.manifold_tol
    1e-09

    See Also
    --------
    dtmanifold.tl.Tolerances
    """
    if profile not in PROFILES:
        raise ValueError(
            f"Profile '{profile}' not supported. Only {list(PROFILES.keys())} are supported."
        )
    return Tolerances.from_dict(PROFILES[profile])


STAGES = ("validate", "riccati", "spectral", "manifold", "dpe", "oracle")

DEPENDENCIES = {
    "validate": (),
    "riccati": ("validate",),
    "spectral": (),
    "manifold": ("riccati", "spectral"),
    "dpe": ("manifold",),
    "oracle": ("riccati",),
}


def with_dependencies(stages) -> tuple[str, ...]:
    """
    Close a set of stages under their dependencies.

    Parameters
    ----------
    stages
        Stage names.

    Returns
    -------
    The requested stages and everything they need, in pipeline order.

    Example
    -------
    >>> with_dependencies(["dpe"])
    ('validate', 'riccati', 'spectral', 'manifold', 'dpe')
    """
    unknown = [s for s in stages if s not in DEPENDENCIES]
    if unknown:
        raise ValueError(f"Unknown stage(s) {unknown}. Possible stages are {list(STAGES)}.")
    needed = set()
    pending = list(stages)
    while pending:
        stage = pending.pop()
        if stage not in needed:
            needed.add(stage)
            pending.extend(DEPENDENCIES[stage])
    return tuple(s for s in STAGES if s in needed)


@dataclass
class OracleSettings:
    """
    Grids of the value-iteration oracle.

    `domain` defaults to the problem's epsilon and `control_bound` to twice the
    domain when left as None.
    """

    domain: float | None = None
    state_step: float = 1e-3
    control_bound: float | None = None
    control_step: float = 1e-3

    def __post_init__(self):
        for name in ("domain", "state_step", "control_bound", "control_step"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"`oracle.{name}` must be positive, got {value}.")

    def to_dict(self) -> dict:
        """Return the settings in config form."""
        return {
            "domain": self.domain,
            "state_step": self.state_step,
            "control_bound": self.control_bound,
            "control_step": self.control_step,
        }


@dataclass
class RunConfig:
    """
    Everything a pipeline run needs.

    Parameters
    ----------
    problem
        The control problem.
    resolution
        Odd number of manifold grid nodes per axis.
    method
        Interpolation of psi, "cubic" or "linear".
    oracle
        Value-iteration grids.
    tolerances
        All tolerances; echoed in the results.
    seed
        Seed of every random sample drawn by the checks.
    sample_count
        Number of random sample points per check.
    trajectory_count
        Number of sampled rollouts exported for plotting.
    stages
        Stages to run; every stage's dependencies must be included.
    threads
        Worker processes for the manifold iteration (1 is fully deterministic).
    outputs
        Output directory.
    """

    problem: Problem
    resolution: int = 21
    method: str = "cubic"
    oracle: OracleSettings = field(default_factory=OracleSettings)
    tolerances: Tolerances = field(default_factory=Tolerances)
    seed: int = 0
    sample_count: int = 100
    trajectory_count: int = 5
    stages: tuple[str, ...] = STAGES
    threads: int = 1
    outputs: str = "results"

    def __post_init__(self):
        self.stages = tuple(self.stages)
        unknown = [s for s in self.stages if s not in DEPENDENCIES]
        if unknown:
            raise ValueError(f"Unknown stage(s) {unknown}. Possible stages are {list(STAGES)}.")
        for stage in self.stages:
            missing = [d for d in DEPENDENCIES[stage] if d not in self.stages]
            if missing:
                raise ValueError(f"Stage '{stage}' needs stage(s) {missing}.")
        self.stages = tuple(s for s in STAGES if s in self.stages)
        if self.resolution < 3 or self.resolution % 2 == 0:
            raise ValueError(f"`grid.resolution` must be odd and at least 3, got {self.resolution}.")
        if self.method not in ("cubic", "linear"):
            raise ValueError(f"`grid.method` must be 'cubic' or 'linear', got '{self.method}'.")
        if self.threads < 1:
            raise ValueError(f"`threads` must be at least 1, got {self.threads}.")
        for name in ("seed", "sample_count", "trajectory_count"):
            if getattr(self, name) < 0:
                raise ValueError(f"`{name}` must be non-negative, got {getattr(self, name)}.")

    def to_dict(self) -> dict:
        """Return the configuration in config-file layout, defaults included."""
        return {
            "problem": self.problem.to_dict(),
            "grid": {"resolution": self.resolution, "method": self.method},
            "oracle": self.oracle.to_dict(),
            "tolerances": self.tolerances.to_dict(),
            "samples": {
                "seed": self.seed,
                "count": self.sample_count,
                "trajectories": self.trajectory_count,
            },
            "stages": list(self.stages),
            "threads": self.threads,
            "outputs": self.outputs,
        }
