import json
from pathlib import Path

import numpy as np
import pytest

import dtmanifold
from dtmanifold.tl import GridFn, Report, RunConfig, StageResult

from ._utils import P2_CONFIG, p1, problem_config

LQ_CONFIG = {"A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]]}


def _write(path, document):
    path.write_text(json.dumps(document))
    return path


def test_package_has_version():
    assert dtmanifold.__version__ is not None


def test_parse_config_defaults(tmp_path):
    cfg = dtmanifold.parse_config(_write(tmp_path / "p1.json", problem_config(LQ_CONFIG)))
    assert cfg.problem.epsilon == 0.1
    assert cfg.problem.is_linear_quadratic
    assert not cfg.problem.has_cross_term
    assert cfg.resolution == 21
    assert cfg.method == "cubic"
    assert cfg.stages == dtmanifold.tl.STAGES
    assert cfg.threads == 1
    assert cfg.tolerances == dtmanifold.tl.Tolerances()


def test_parse_config_reads_sections(tmp_path):
    document = problem_config(
        P2_CONFIG,
        grid={"resolution": 11, "method": "linear"},
        oracle={"state_step": 0.01},
        tolerances={"dpe_tol": 1e-5, "manifold_max_iter": 20},
        samples={"seed": 7, "count": 10},
        stages=["validate", "riccati"],
        threads=2,
    )
    cfg = dtmanifold.parse_config(_write(tmp_path / "p2.json", document))
    assert (cfg.resolution, cfg.method) == (11, "linear")
    assert cfg.oracle.state_step == 0.01
    assert cfg.tolerances.dpe_tol == 1e-5
    assert cfg.tolerances.manifold_max_iter == 20
    assert (cfg.seed, cfg.sample_count, cfg.trajectory_count) == (7, 10, 5)
    assert cfg.stages == ("validate", "riccati")
    assert cfg.problem.f_nl.evaluate(np.array([0.2]), np.zeros(1))[0] == pytest.approx(0.004)


def test_parse_config_rejects_indefinite_r(tmp_path):
    document = problem_config({**LQ_CONFIG, "R": [[-1.0]]})
    with pytest.raises(ValueError, match="R symmetric positive definite"):
        dtmanifold.parse_config(_write(tmp_path / "bad.json", document))


def test_parse_config_reports_syntax_error_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "problem": {\n    "A": [[0.5]],,\n  }\n}\n')
    with pytest.raises(ValueError, match="line 3, column"):
        dtmanifold.parse_config(path)


def test_parse_config_rejects_unknown_and_missing_keys(tmp_path):
    with pytest.raises(ValueError, match="Unknown key"):
        dtmanifold.parse_config(_write(tmp_path / "a.json", problem_config(LQ_CONFIG, colour="red")))
    with pytest.raises(ValueError, match="Unknown key"):
        dtmanifold.parse_config(_write(tmp_path / "b.json", problem_config({**LQ_CONFIG, "C": [[1.0]]})))
    missing = {k: v for k, v in LQ_CONFIG.items() if k != "Q"}
    with pytest.raises(ValueError, match="Missing key"):
        dtmanifold.parse_config(_write(tmp_path / "c.json", problem_config(missing)))


def test_config_rejects_incomplete_stage_list():
    with pytest.raises(ValueError, match="needs stage"):
        dtmanifold.config_from_dict(problem_config(LQ_CONFIG, stages=["manifold"]))


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        dtmanifold.parse_config(tmp_path / "nothing.json")


def test_serialize_config_round_trip(tmp_path):
    cfg = dtmanifold.config_from_dict(problem_config(P2_CONFIG, samples={"seed": 3}))
    text = dtmanifold.serialize_config(cfg)
    again = dtmanifold.parse_config(_write(tmp_path / "echo.json", json.loads(text)))
    assert again.to_dict() == cfg.to_dict()
    assert dtmanifold.serialize_config(again) == text


def test_export_grid_csv_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.standard_normal((5, 5, 1)) * np.pi
    values[2, 2] = 0.0
    grid = GridFn(2, 0.1, 5, values)
    prob = dtmanifold.pp.Problem(A=0.5 * np.eye(2), B=np.eye(2), Q=np.eye(2), R=np.eye(2))
    cfg = RunConfig(problem=prob)
    report = Report(config=cfg, artifacts={"psi": grid})
    written = dtmanifold.export_results(report, tmp_path)
    assert tmp_path / "psi_grid.csv" in written

    table = dtmanifold.read_grid_csv(tmp_path / "psi_grid.csv")
    np.testing.assert_array_equal(table[["x1", "x2"]].to_numpy(), grid.points())
    np.testing.assert_array_equal(table["psi"].to_numpy(), grid.flat_values()[:, 0])


def test_export_results_without_stages(tmp_path):
    cfg = RunConfig(problem=p1(), stages=())
    written = dtmanifold.export_results(Report(config=cfg), tmp_path / "out")
    names = sorted(p.name for p in written)
    assert names == ["metadata.json", "results.json"]
    results = json.loads((tmp_path / "out" / "results.json").read_text())
    assert list(results) == ["config"]
    assert results["config"]["problem"]["A"] == [[0.5]]
    metadata = json.loads((tmp_path / "out" / "metadata.json").read_text())
    assert metadata["version"] == dtmanifold.__version__


def test_export_results_writes_complex_as_pairs(tmp_path):
    cfg = RunConfig(problem=p1(), stages=("spectral",))
    report = Report(
        config=cfg,
        stages={"spectral": StageResult("spectral", "passed")},
        results={"spectral": {"finite_eigs": np.array([0.5 + 0.25j, 2.0 - 1.0j])}},
    )
    dtmanifold.export_results(report, tmp_path)
    results = json.loads((tmp_path / "results.json").read_text())
    assert results["results"]["spectral"]["finite_eigs"] == [[0.5, 0.25], [2.0, -1.0]]
    assert (tmp_path / "checks.csv").is_file()


def test_read_grid_csv_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        dtmanifold.read_grid_csv(tmp_path / "psi_grid.csv")


@pytest.mark.parametrize(
    ("name", "epsilon", "linear_quadratic"), [("p1.json", 0.1, True), ("p2.json", 0.2, False)]
)
def test_parse_shipped_configs(name, epsilon, linear_quadratic):
    cfg = dtmanifold.parse_config(Path(__file__).parents[1] / "configs" / name)
    assert cfg.problem.epsilon == epsilon
    assert cfg.problem.is_linear_quadratic == linear_quadratic
    assert cfg.stages == dtmanifold.tl.STAGES
    assert cfg.outputs == f"results/{name[:-5]}"
