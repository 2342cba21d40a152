"""Run the solver stages of a configuration and collect every check into one report."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
import pandas as pd
from loguru import logger

from dtmanifold.pp import eliminate_cross_term, validate_problem
from dtmanifold.tl._configs import DEPENDENCIES, RunConfig
from dtmanifold.tl._dpe import (
    cost_field,
    dpe_residual,
    feedback_policy,
    gradient_consistency,
    integrate_cost,
)
from dtmanifold.tl._manifold import (
    apply_T,
    closedness_check,
    invariance_residual,
    phi_eval,
    rollout,
    solve_manifold,
)
from dtmanifold.tl._oracle import MAX_ORACLE_DIMENSION, value_iteration_oracle
from dtmanifold.tl._pmp import BidirectionalPoint
from dtmanifold.tl._riccati import dtare_residual, feedback_gain, solve_dtare
from dtmanifold.tl._spectral import (
    TangentPair,
    eigenpair_residuals,
    invariance_check,
    pencil_eigenvalues,
    propagate_tangents,
    reciprocity_check,
    stable_subspace_graph,
)
from dtmanifold.utils import apply_matrix

STATUSES = ("passed", "failed", "error", "skipped")

SYMPLECTIC_PAIRS = 50
TANGENT_STEPS = 20


@dataclass
class CheckResult:
    """
    Outcome of one residual or invariant check.

    Attributes
    ----------
    stage
        Stage that ran the check.
    name
        Short check name, unique within the stage.
    passed
        Whether the check passed.
    value
        Measured quantity (None for yes/no checks).
    threshold
        Bound the value was compared with.
    detail
        Human readable explanation.
    """

    stage: str
    name: str
    passed: bool
    value: float | None = None
    threshold: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        """Plain dictionary for the results file."""
        return {
            "stage": self.stage,
            "name": self.name,
            "passed": bool(self.passed),
            "value": None if self.value is None else float(self.value),
            "threshold": None if self.threshold is None else float(self.threshold),
            "detail": self.detail,
        }


@dataclass
class StageResult:
    """Status of a stage: "passed", "failed" (a check failed), "error" (it raised) or "skipped"."""

    name: str
    status: str
    message: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"`status` must be one of {STATUSES}, got '{self.status}'.")


@dataclass
class Report:
    """
    Everything a pipeline run produced.

    Attributes
    ----------
    config
        The run configuration.
    stages
        Stage results keyed by stage name, in pipeline order.
    checks
        All checks of all stages.
    results
        Scalars, matrices and spectra per stage, ready for the results file.
    artifacts
        Grid functions (`psi`, `pi`, `kappa`, `pi_oracle`, `kappa_oracle`) and the
        `trajectories` table, exported as CSV.
    started, finished
        ISO timestamps of the run; they only go to the metadata file.
    """

    config: RunConfig
    stages: dict[str, StageResult] = field(default_factory=dict)
    checks: list[CheckResult] = field(default_factory=list)
    results: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    @property
    def exit_code(self) -> int:
        """3 if a stage raised, else 1 if a check failed, else 0."""
        if any(s.status == "error" for s in self.stages.values()):
            return 3
        if any(not c.passed for c in self.checks):
            return 1
        return 0

    @property
    def passed(self) -> bool:
        """True if the exit code is 0."""
        return self.exit_code == 0

    def check(self, stage: str, name: str) -> CheckResult:
        """Look up a check by stage and name."""
        for c in self.checks:
            if c.stage == stage and c.name == name:
                return c
        raise KeyError(f"No check '{name}' in stage '{stage}'.")

    def to_frame(self) -> pd.DataFrame:
        """Table of all checks, one row per check."""
        columns = ["stage", "name", "passed", "value", "threshold", "detail"]
        return pd.DataFrame([c.to_dict() for c in self.checks], columns=columns)

    def to_dict(self) -> dict:
        """
        Results file content.

        Contains the config echo, and if any stage was requested the stage
        statuses, the checks and the stage results. No timestamps.
        """
        out = {"config": self.config.to_dict()}
        if self.config.stages:
            out["stages"] = {
                name: {"status": s.status, "message": s.message} for name, s in self.stages.items()
            }
            out["checks"] = [c.to_dict() for c in self.checks]
            out["results"] = self.results
        return out


def _within(value: float, threshold: float) -> bool:
    return bool(np.isfinite(value) and value <= threshold)


def _max_abs(M) -> float:
    return float(np.abs(M).max(initial=0.0))


class _Run:
    """State shared between the stages of one run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.tol = cfg.tolerances
        self.prob = cfg.problem
        self.reduced = None
        self.riccati = None
        self.manifold = None
        self.checks: list[CheckResult] = []
        self.results: dict = {}
        self.artifacts: dict = {}

    def add(
        self, stage, name, passed, value=None, threshold=None, detail=""
    ) -> bool:
        self.checks.append(
            CheckResult(stage, name, bool(passed), value, threshold, detail)
        )
        if not passed:
            logger.warning(
                f"Check {stage}/{name} failed (value {value}, threshold {threshold}). {detail}"
            )
        return bool(passed)

    def bound(self, stage, name, value, threshold) -> bool:
        """Record a check of the form ``value <= threshold``."""
        return self.add(stage, name, _within(value, threshold), value, threshold)

    def samples(self, stream: int) -> np.ndarray:
        """Seeded uniform samples in the half box of the manifold's final radius."""
        rng = np.random.default_rng([self.cfg.seed, stream])
        half = 0.5 * self.manifold.epsilon
        return rng.uniform(-half, half, size=(self.cfg.sample_count, self.prob.n))

    def reduced_problem(self):
        if self.reduced is None:
            self.reduced = eliminate_cross_term(self.prob)
        return self.reduced

    # each stage returns True when all of its checks passed

    def validate(self) -> bool:
        report = validate_problem(self.prob, rank_tol=self.tol.rank_tol)
        for name, passed in report.checks.items():
            self.add("validate", name, passed)
        self.results["validate"] = {
            "checks": dict(report.checks),
            "failures": list(report.failures),
        }
        return report.passed

    def riccati_stage(self) -> bool:
        tol = self.tol
        sol = solve_dtare(
            self.reduced_problem(),
            tol=tol.dtare_tol,
            max_iter=tol.dtare_max_iter,
            lyapunov_tol=tol.lyapunov_tol,
        )
        self.riccati = sol
        n = self.prob.n
        residual = dtare_residual(self.prob, sol.P)
        Acl, M = sol.closed_loop, sol.lyapunov_M
        lyapunov = _max_abs(Acl.T @ M @ Acl - M + np.eye(n))
        smallest = float(np.linalg.eigvalsh(sol.P)[0]) if n else 0.0
        dtare_bound = tol.dtare_residual_tol * (1.0 + _max_abs(sol.P))
        ok = [
            self.bound("riccati", "dtare_residual", residual, dtare_bound),
            self.add(
                "riccati",
                "closed_loop_stable",
                sol.alpha < 1.0 - tol.stability_margin,
                sol.alpha,
                1.0 - tol.stability_margin,
            ),
            self.bound(
                "riccati",
                "lyapunov_residual",
                lyapunov,
                tol.lyapunov_residual_tol * (1.0 + _max_abs(M)),
            ),
            self.add(
                "riccati", "positive_semidefinite", smallest >= -dtare_bound, smallest, 0.0
            ),
        ]
        self.results["riccati"] = {
            "P": sol.P,
            # gain of the problem as given, cross term included
            "K": feedback_gain(self.prob, sol.P),
            "alpha": sol.alpha,
            "closed_loop_spectrum": sol.closed_loop_spectrum,
            "lyapunov_M": M,
            "iterations": sol.iterations,
            "residual": residual,
        }
        return all(ok)

    def spectral(self) -> bool:
        tol = self.tol
        prob = self.reduced_problem()
        spec = pencil_eigenvalues(
            prob, zero_tol=tol.zero_eig_tol, infinite_tol=tol.infinite_eig_tol
        )
        recip = reciprocity_check(
            spec, tol=tol.reciprocity_tol, hyperbolicity_tol=tol.hyperbolicity_tol
        )
        worst = float(eigenpair_residuals(prob, spec).max(initial=0.0))
        ok = [
            self.add(
                "spectral",
                "reciprocity",
                recip.reciprocal,
                recip.max_mismatch,
                tol.reciprocity_tol,
            ),
            self.add(
                "spectral",
                "zero_infinite_balance",
                recip.balanced,
                detail=f"{spec.zero_count} zero, {spec.infinite_count} infinite",
            ),
            self.add(
                "spectral",
                "hyperbolicity",
                recip.hyperbolic,
                detail="; ".join(recip.failures),
            ),
            self.bound("spectral", "eigenpair_residual", worst, tol.eigenpair_tol),
        ]
        self.results["spectral"] = {
            "finite_eigs": spec.finite_eigs,
            "zero_count": spec.zero_count,
            "infinite_count": spec.infinite_count,
            "max_mismatch": recip.max_mismatch,
            "ambiguous": list(recip.ambiguous),
        }
        if recip.hyperbolic and self.riccati is not None:
            graph = stable_subspace_graph(prob, spec)
            P = self.riccati.P
            mismatch = _max_abs(graph - P) / (1.0 + _max_abs(P))
            ok.append(
                self.bound("spectral", "stable_subspace_graph", mismatch, tol.graph_tol)
            )
            self.results["spectral"]["stable_subspace_graph"] = graph
        ok.append(self._symplectic_pairs(prob))
        return all(ok)

    def _symplectic_pairs(self, prob) -> bool:
        """Two-form preservation of single bidirectional tangent steps at random points."""
        n = prob.n
        rng = np.random.default_rng([self.cfg.seed, 1])
        worst = 0.0
        for _ in range(SYMPLECTIC_PAIRS):
            x, lambda_plus = rng.uniform(-prob.epsilon, prob.epsilon, size=(2, n))
            pair = TangentPair(rng.standard_normal(2 * n), rng.standard_normal(2 * n))
            result = invariance_check(prob, x, lambda_plus, pair)
            worst = max(worst, result.error / (1.0 + abs(result.omega)))
        return self.bound("spectral", "symplectic_step", worst, self.tol.symplectic_tol)

    def manifold_stage(self) -> bool:
        cfg, tol = self.cfg, self.tol
        sol = solve_manifold(
            self.prob,
            resolution=cfg.resolution,
            method=cfg.method,
            tolerances=tol,
            threads=cfg.threads,
            seed=cfg.seed,
        )
        self.manifold = sol
        image = apply_T(
            sol.problem, sol.P, sol.K, sol.psi, threads=cfg.threads, tolerances=tol
        )
        certificate = sol.psi.sup_distance(image)
        invariance = float(invariance_residual(sol, self.samples(2)).max(initial=0.0))
        closedness = closedness_check(
            sol, constant=tol.closedness_constant, floor=tol.closedness_floor
        )
        trajectories, rollouts = self._trajectories(sol)
        ok = [
            self.add(
                "manifold",
                "contraction",
                sol.contraction_estimate < 1.0,
                sol.contraction_estimate,
                1.0,
            ),
            self.bound(
                "manifold", "fixed_point_certificate", certificate, tol.certificate_tol
            ),
            self.bound("manifold", "invariance", invariance, tol.invariance_tol),
            self.add(
                "manifold",
                "lipschitz",
                sol.lipschitz.passed,
                sol.lipschitz.l_hat,
                sol.lipschitz.budget,
            ),
            self.add(
                "manifold",
                "closedness",
                closedness.passed,
                closedness.value,
                closedness.threshold,
            ),
            self.bound(
                "manifold", "symplectic_propagation", rollouts["drift"], tol.symplectic_tol
            ),
        ]
        if self.cfg.trajectory_count:
            ok.append(
                self.add(
                    "manifold",
                    "decay_bound",
                    rollouts["decay_bound"] < 1.0,
                    rollouts["decay_bound"],
                    1.0,
                    detail=(
                        f"(alpha + N1 eps) / (1 - N1 eps); largest observed ratio "
                        f"{rollouts['decay_ratio']:.6g}"
                    ),
                )
            )
        self.artifacts["psi"] = sol.psi
        self.artifacts["trajectories"] = trajectories
        self.results["manifold"] = {
            "epsilon": sol.epsilon,
            "halvings": sol.halvings,
            "contraction_estimate": sol.contraction_estimate,
            "iteration_count": sol.iteration_count,
            "residual_history": list(sol.residual_history),
            "truncation_horizon": sol.truncation_horizon,
            "certificate": certificate,
            "psi_sup": _max_abs(sol.psi.values),
            "lipschitz": {"l_hat": sol.lipschitz.l_hat, "budget": sol.lipschitz.budget},
            "closedness": {"value": closedness.value, "threshold": closedness.threshold},
            "rollouts": rollouts,
        }
        return all(ok)

    def _trajectories(self, sol) -> tuple[pd.DataFrame, dict]:
        """
        Sampled rollouts for export and their diagnostics.

        The diagnostics hold the worst two-form drift along the first steps, how
        many trajectories needed the per-step tangent fallback, and the largest
        observed decay ratio and decay bound.
        """
        n = sol.problem.n
        rng = np.random.default_rng([self.cfg.seed, 3])
        half = 0.5 * sol.epsilon
        tables = []
        summary = {"drift": 0.0, "stepwise_fallbacks": 0, "decay_ratio": 0.0, "decay_bound": 0.0}
        for index in range(self.cfg.trajectory_count):
            traj = rollout(
                sol.problem,
                sol.P,
                sol.K,
                sol.psi,
                rng.uniform(-half, half, size=n),
                lyapunov_M=sol.riccati.lyapunov_M,
                tolerances=self.tol,
                seed=self.cfg.seed,
            )
            summary["decay_ratio"] = max(summary["decay_ratio"], traj.decay_ratio)
            summary["decay_bound"] = max(summary["decay_bound"], traj.decay_bound)
            table = pd.DataFrame({f"x{i + 1}": traj.states[:, i] for i in range(n)})
            table.insert(0, "step", np.arange(len(traj.states)))
            table.insert(0, "trajectory", index)
            tables.append(table)

            states = traj.states[: TANGENT_STEPS + 1]
            if len(states) < 2:
                continue
            x, x_plus = states[:-1], states[1:]
            lambda_plus = apply_matrix(sol.P, x_plus) + sol.psi(x_plus)
            pair = TangentPair(rng.standard_normal(2 * n), rng.standard_normal(2 * n))
            try:
                errors = propagate_tangents(
                    sol.problem, BidirectionalPoint(x, lambda_plus), pair
                )
            except np.linalg.LinAlgError:
                # the forward map does not exist where H_lx is singular
                logger.warning(
                    "Tangent propagation hit a singular step; checking each step on its own."
                )
                results = [
                    invariance_check(sol.problem, xi, li, pair)
                    for xi, li in zip(x, lambda_plus)
                ]
                errors = [r.error / (1.0 + abs(r.omega)) for r in results]
                summary["stepwise_fallbacks"] += 1
            summary["drift"] = max(summary["drift"], float(np.max(errors)))
        columns = ["trajectory", "step"] + [f"x{i + 1}" for i in range(n)]
        if not tables:
            return pd.DataFrame(columns=columns), summary
        return pd.concat(tables, ignore_index=True), summary

    def dpe(self) -> bool:
        tol = self.tol
        sol = self.manifold
        prob = self.prob
        field_ = cost_field(prob, sol)
        self.artifacts["pi"] = field_.pi
        self.artifacts["kappa"] = field_.kappa

        def pi(y, path="ray"):
            return integrate_cost(
                sol,
                y,
                path=path,
                tol=tol.quadrature_tol,
                max_order=tol.quadrature_max_order,
            )

        samples = self.samples(4)
        report = dpe_residual(
            prob,
            pi=pi,
            kappa=lambda y: feedback_policy(prob, sol, y),
            grad_pi=lambda y: phi_eval(sol, y),
            samples=samples,
            tol=tol.dpe_tol,
        )
        staircase = pi(samples, path="staircase")
        path = float(
            (np.abs(report.pi - staircase) / (1.0 + np.abs(report.pi))).max(initial=0.0)
        )
        gradient = gradient_consistency(sol, samples)
        ok = [
            self.bound("dpe", "cost_equation", report.max_r1, tol.dpe_tol),
            self.bound("dpe", "control_equation", report.max_r2, tol.dpe_tol),
            self.bound("dpe", "path_independence", path, tol.path_tol),
            self.bound("dpe", "gradient_consistency", gradient, tol.gradient_tol),
        ]
        self.results["dpe"] = {
            "max_r1": report.max_r1,
            "max_r2": report.max_r2,
            "path_mismatch": path,
            "gradient_mismatch": gradient,
            "table": report.to_frame().to_dict(orient="list"),
        }
        return all(ok)

    def oracle(self) -> bool:
        cfg, tol = self.cfg, self.tol
        settings = cfg.oracle
        field_ = value_iteration_oracle(
            self.prob,
            domain=settings.domain,
            state_step=settings.state_step,
            control_bound=settings.control_bound,
            control_step=settings.control_step,
            tol=tol.oracle_tol,
            max_sweeps=tol.oracle_max_sweeps,
        )
        self.artifacts["pi_oracle"] = field_.pi
        self.artifacts["kappa_oracle"] = field_.kappa
        diagnostics = field_.diagnostics
        ok = [self.add("oracle", "monotone", diagnostics["monotone"])]
        self.results["oracle"] = {
            key: diagnostics[key]
            for key in ("sweeps", "history", "monotone", "state_step", "control_step")
        }
        if self.manifold is not None:
            sol = self.manifold
            # inner half of the oracle box, away from the extrapolated rim
            half = min(0.5 * field_.pi.epsilon, sol.epsilon)
            nodes = field_.pi.points()
            inner = np.abs(nodes).max(axis=-1) <= half * (1.0 + 1e-12)
            pi = integrate_cost(
                sol,
                nodes[inner],
                tol=tol.quadrature_tol,
                max_order=tol.quadrature_max_order,
            )
            gap = _max_abs(pi - field_.pi.flat_values()[inner, 0])
            ok.append(
                self.bound("oracle", "manifold_agreement", gap, tol.oracle_agreement_tol)
            )
            self.results["oracle"]["agreement"] = {"half_width": half, "sup_gap": gap}
        return all(ok)


def run_pipeline(cfg: RunConfig) -> Report:
    """
    Run the stages of `cfg` in dependency order.

    A stage runs only when all its dependencies passed; otherwise it is
    recorded as skipped. Exceptions raised inside a stage are logged and turn
    the stage into an error without stopping independent stages. The oracle is
    skipped for n > 2.

    Parameters
    ----------
    cfg
        The run configuration.

    Returns
    -------
    The report, also when stages failed.

    Example
    -------
    >>> cfg = RunConfig(problem=Problem(A=[[0.5]], B=[[1.0]], Q=[[1.0]], R=[[1.0]]))
    >>> run_pipeline(cfg).exit_code
    0
    """
    run = _Run(cfg)
    runners = {
        "validate": run.validate,
        "riccati": run.riccati_stage,
        "spectral": run.spectral,
        "manifold": run.manifold_stage,
        "dpe": run.dpe,
        "oracle": run.oracle,
    }
    stages: dict[str, StageResult] = {}
    started = datetime.now(timezone.utc).isoformat()
    for name in cfg.stages:
        blocked = [d for d in DEPENDENCIES[name] if stages[d].status != "passed"]
        if blocked:
            stages[name] = StageResult(name, "skipped", f"dependency {', '.join(blocked)} did not pass")
            logger.info(f"Skipping stage '{name}': dependency {', '.join(blocked)} did not pass.")
            continue
        if name == "oracle" and cfg.problem.n > MAX_ORACLE_DIMENSION:
            stages[name] = StageResult(name, "skipped", f"value iteration is limited to n <= {MAX_ORACLE_DIMENSION}")
            logger.info(f"Skipping stage 'oracle' for n={cfg.problem.n}.")
            continue
        logger.info(f"Running stage '{name}'.")
        try:
            passed = runners[name]()
        except Exception as e:  # noqa: BLE001
            logger.error(f"Stage '{name}' failed with {type(e).__name__}: {e}")
            stages[name] = StageResult(name, "error", f"{type(e).__name__}: {e}")
            continue
        stages[name] = StageResult(name, "passed" if passed else "failed")
        logger.info(f"Stage '{name}' {stages[name].status}.")
    finished = datetime.now(timezone.utc).isoformat()
    return Report(
        config=cfg,
        stages=stages,
        checks=run.checks,
        results=run.results,
        artifacts=run.artifacts,
        started=started,
        finished=finished,
    )
