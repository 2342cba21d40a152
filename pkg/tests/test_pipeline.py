"""Pipeline tests: stage ordering, skipping, exit codes and reproducible results."""

import numpy as np
import pytest

import dtmanifold
from dtmanifold.tl import CheckResult, Report, RunConfig, StageResult

from ._utils import p0, p1, p2, random_problem, scalar_problem


def _lq_config(**kwargs):
    kwargs.setdefault("resolution", 5)
    kwargs.setdefault("sample_count", 20)
    kwargs.setdefault("trajectory_count", 2)
    return RunConfig(problem=p1(), **kwargs)


@pytest.fixture(scope="module")
def lq_report():
    return dtmanifold.tl.run_pipeline(_lq_config())


def test_linear_quadratic_run_passes(lq_report):
    report = lq_report
    assert report.exit_code == 0
    assert list(report.stages) == list(dtmanifold.tl.STAGES)
    assert all(s.status == "passed" for s in report.stages.values())

    assert report.results["riccati"]["P"][0, 0] == pytest.approx(1.1327822, abs=1e-7)
    assert report.results["manifold"]["psi_sup"] == 0.0
    assert report.results["manifold"]["halvings"] == 0
    assert report.check("manifold", "closedness").value == 0.0
    assert report.check("dpe", "cost_equation").value <= 1e-10
    assert report.check("oracle", "manifold_agreement").passed
    assert report.check("manifold", "decay_bound").value == pytest.approx(0.2344295, abs=1e-7)
    assert report.results["manifold"]["rollouts"]["stepwise_fallbacks"] == 0

    names = {(c.stage, c.name) for c in report.checks}
    assert ("spectral", "stable_subspace_graph") in names
    assert ("manifold", "symplectic_propagation") in names
    assert set(report.artifacts) == {
        "psi",
        "trajectories",
        "pi",
        "kappa",
        "pi_oracle",
        "kappa_oracle",
    }
    assert list(report.artifacts["trajectories"].columns) == ["trajectory", "step", "x1"]


def test_report_check_lookup(lq_report):
    assert lq_report.check("riccati", "dtare_residual").passed
    with pytest.raises(KeyError):
        lq_report.check("riccati", "no_such_check")
    assert list(lq_report.to_frame().columns) == [
        "stage",
        "name",
        "passed",
        "value",
        "threshold",
        "detail",
    ]


def test_results_are_reproducible(lq_report, tmp_path):
    dtmanifold.export_results(lq_report, tmp_path / "first")
    dtmanifold.export_results(dtmanifold.tl.run_pipeline(_lq_config()), tmp_path / "second")
    for name in ("results.json", "checks.csv", "psi_grid.csv", "pi_grid.csv", "trajectories.csv"):
        assert (tmp_path / "first" / name).read_text() == (tmp_path / "second" / name).read_text()


def test_unit_circle_skips_manifold():
    cfg = RunConfig(
        problem=scalar_problem(a=1.0, b=0.0, q=0.0),
        stages=("validate", "riccati", "spectral", "manifold", "dpe"),
    )
    report = dtmanifold.tl.run_pipeline(cfg)
    assert report.stages["validate"].status == "failed"
    assert report.stages["spectral"].status == "failed"
    assert not report.check("spectral", "hyperbolicity").passed
    assert report.check("spectral", "reciprocity").passed
    for stage in ("riccati", "manifold", "dpe"):
        assert report.stages[stage].status == "skipped"
    assert report.stages["dpe"].message == "dependency manifold did not pass"
    assert report.exit_code == 1
    assert "manifold" not in report.results


def test_stage_error_is_contained():
    tolerances = dtmanifold.tl.Tolerances(manifold_max_iter=1, max_halvings=1)
    cfg = RunConfig(
        problem=p2(),
        resolution=5,
        tolerances=tolerances,
        stages=("validate", "riccati", "spectral", "manifold", "dpe"),
    )
    report = dtmanifold.tl.run_pipeline(cfg)
    assert report.stages["spectral"].status == "passed"
    assert report.stages["manifold"].status == "error"
    assert report.stages["manifold"].message.startswith("ConvergenceError")
    assert report.stages["dpe"].status == "skipped"
    assert report.exit_code == 3


def test_oracle_skipped_above_two_states():
    prob = random_problem(np.random.default_rng(2), 3, 1)
    report = dtmanifold.tl.run_pipeline(
        RunConfig(problem=prob, stages=("validate", "riccati", "oracle"))
    )
    assert report.stages["riccati"].status == "passed"
    assert report.stages["oracle"].status == "skipped"
    assert "n <= 2" in report.stages["oracle"].message
    assert report.exit_code == 0


def test_empty_run_has_only_config():
    report = dtmanifold.tl.run_pipeline(_lq_config(stages=()))
    assert report.stages == {}
    assert list(report.to_dict()) == ["config"]
    assert report.exit_code == 0


def test_exit_code_priority():
    cfg = _lq_config(stages=("validate", "riccati"))
    failing = CheckResult("validate", "R symmetric positive definite", False)
    report = Report(
        config=cfg,
        stages={"validate": StageResult("validate", "failed")},
        checks=[failing],
    )
    assert report.exit_code == 1
    assert not report.passed
    report.stages["riccati"] = StageResult("riccati", "error", "LinAlgError: singular")
    assert report.exit_code == 3
    assert Report(config=cfg).exit_code == 0


def test_stage_result_rejects_unknown_status():
    with pytest.raises(ValueError, match="`status`"):
        StageResult("validate", "maybe")


def test_with_dependencies_closes_stage_set():
    assert dtmanifold.tl.with_dependencies(["dpe"]) == (
        "validate",
        "riccati",
        "spectral",
        "manifold",
        "dpe",
    )
    assert dtmanifold.tl.with_dependencies(["oracle"]) == ("validate", "riccati", "oracle")
    assert dtmanifold.tl.with_dependencies([]) == ()
    with pytest.raises(ValueError):
        dtmanifold.tl.with_dependencies(["plot"])


@pytest.mark.slow
def test_nonlinear_run_passes_and_exports(tmp_path):
    cfg = RunConfig(problem=p2(0.2), resolution=21, sample_count=20, trajectory_count=2)
    report = dtmanifold.tl.run_pipeline(cfg)
    assert report.exit_code == 0, report.to_frame()
    assert all(s.status == "passed" for s in report.stages.values())

    manifold = report.results["manifold"]
    assert 0.0 < manifold["contraction_estimate"] < 1.0
    assert manifold["psi_sup"] > 0.0
    rollouts = manifold["rollouts"]
    assert rollouts["decay_ratio"] <= rollouts["decay_bound"] < 1.0

    table = report.results["dpe"]["table"]
    assert sorted(table) == ["pi", "r1", "r2_1", "x1"]
    assert len(table["r1"]) == 20
    assert max(abs(r) for r in table["r1"]) <= cfg.tolerances.dpe_tol * 2

    dtmanifold.export_results(report, tmp_path)
    expected = {
        "psi_grid.csv": ["x1", "psi"],
        "pi_grid.csv": ["x1", "pi"],
        "kappa_grid.csv": ["x1", "kappa"],
        "pi_oracle_grid.csv": ["x1", "pi_oracle"],
        "kappa_oracle_grid.csv": ["x1", "kappa_oracle"],
        "trajectories.csv": ["trajectory", "step", "x1"],
        "checks.csv": ["stage", "name", "passed", "value", "threshold", "detail"],
    }
    for name, columns in expected.items():
        assert list(dtmanifold.read_grid_csv(tmp_path / name).columns) == columns
    assert len(dtmanifold.read_grid_csv(tmp_path / "psi_grid.csv")) == 21


@pytest.mark.slow
def test_degenerate_run_passes():
    # A = 0: the pencil has zero and infinite eigenvalues, H_lx is singular at the origin
    cfg = RunConfig(problem=p0(0.1), resolution=21, sample_count=20, trajectory_count=2)
    report = dtmanifold.tl.run_pipeline(cfg)
    assert report.exit_code == 0, report.to_frame()
    assert all(s.status == "passed" for s in report.stages.values())
    assert report.results["spectral"]["zero_count"] == 1
    assert report.results["spectral"]["infinite_count"] == 1
    assert report.results["manifold"]["contraction_estimate"] < 1.0
    assert report.results["manifold"]["rollouts"]["stepwise_fallbacks"] == 2
    assert report.check("manifold", "symplectic_propagation").passed
    assert report.check("dpe", "cost_equation").passed
    assert report.check("oracle", "manifold_agreement").passed
