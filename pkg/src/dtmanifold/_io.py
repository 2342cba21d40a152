"""I/O functions for run configurations and pipeline results."""

from __future__ import annotations

import json
import numbers
from importlib.metadata import version
from os import PathLike
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from dtmanifold.pp import PolyMap, Problem, terms_from_config
from dtmanifold.tl import OracleSettings, Report, RunConfig, Tolerances
from dtmanifold.utils import log_and_raise

_TOP_KEYS = {
    "problem",
    "grid",
    "oracle",
    "tolerances",
    "samples",
    "stages",
    "threads",
    "outputs",
}
_PROBLEM_KEYS = {"A", "B", "Q", "R", "S", "f_nl", "l_nl", "epsilon"}
_GRID_KEYS = {"resolution", "method"}
_ORACLE_KEYS = {"domain", "state_step", "control_bound", "control_step"}
_SAMPLE_KEYS = {"seed", "count", "trajectories"}

GRID_FILES = {
    "psi": "psi_grid.csv",
    "pi": "pi_grid.csv",
    "kappa": "kappa_grid.csv",
    "pi_oracle": "pi_oracle_grid.csv",
    "kappa_oracle": "kappa_oracle_grid.csv",
}
FLOAT_FORMAT = "%.17g"


def _check_keys(section: str, given: dict, allowed: set, required: set = frozenset()):
    if not isinstance(given, dict):
        raise ValueError(f"`{section}` must be an object, got {type(given).__name__}.")
    unknown = set(given) - allowed
    if unknown:
        raise ValueError(f"Unknown key(s) {sorted(unknown)} in `{section}`.")
    missing = set(required) - set(given)
    if missing:
        raise ValueError(f"Missing key(s) {sorted(missing)} in `{section}`.")


def _number(name: str, value, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ValueError(f"`{name}` must be a number, got {value!r}.")
    if integer:
        if int(value) != value:
            raise ValueError(f"`{name}` must be an integer, got {value}.")
        return int(value)
    return float(value)


def _matrix(name: str, value) -> np.ndarray:
    if not isinstance(value, list) or not all(isinstance(row, list) for row in value):
        raise ValueError(f"`problem.{name}` must be a list of rows.")
    if len({len(row) for row in value}) > 1:
        raise ValueError(f"Rows of `problem.{name}` have different lengths.")
    return np.array(
        [[_number(f"problem.{name}", v) for v in row] for row in value], dtype=float
    )


def _problem_from_dict(section: dict) -> Problem:
    _check_keys("problem", section, _PROBLEM_KEYS, {"A", "B", "Q", "R"})
    A, B, Q, R = (_matrix(k, section[k]) for k in "ABQR")
    S = _matrix("S", section["S"]) if "S" in section else None
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError("`problem.A` and `problem.B` must be non-empty matrices.")
    n, m = A.shape[0], B.shape[1]
    if R.shape == (m, m) and not (
        np.allclose(R, R.T, rtol=0.0, atol=1e-14 * (1.0 + np.abs(R).max()))
        and np.linalg.eigvalsh(0.5 * (R + R.T))[0] > 0.0
    ):
        raise ValueError("`problem.R` violates: R symmetric positive definite.")

    f_entries = section.get("f_nl", [])
    if not isinstance(f_entries, list) or (f_entries and len(f_entries) != n):
        raise ValueError(f"`problem.f_nl` must hold one term list per state (n={n}).")
    f_nl = PolyMap(n, m, n, tuple(terms_from_config(terms, n, m) for terms in f_entries))
    l_entries = section.get("l_nl", [])
    if not isinstance(l_entries, list):
        raise ValueError("`problem.l_nl` must be a list of terms.")
    l_nl = PolyMap(n, m, 1, (terms_from_config(l_entries, n, m),))
    epsilon = _number("problem.epsilon", section.get("epsilon", 0.1))
    return Problem(A=A, B=B, Q=Q, R=R, S=S, f_nl=f_nl, l_nl=l_nl, epsilon=epsilon)


def config_from_dict(config: dict) -> RunConfig:
    """
    Build a run configuration from its dictionary form.

    Parameters
    ----------
    config
        Parsed JSON document, see :func:`parse_config`.

    Raises
    ------
    ValueError
        If a key is unknown, a required key is missing or a value violates an invariant.
    """
    _check_keys("config", config, _TOP_KEYS, {"problem"})
    problem = _problem_from_dict(config["problem"])

    grid = config.get("grid", {})
    _check_keys("grid", grid, _GRID_KEYS)
    oracle = config.get("oracle", {})
    _check_keys("oracle", oracle, _ORACLE_KEYS)
    oracle = OracleSettings(
        **{
            k: None if v is None else _number(f"oracle.{k}", v)
            for k, v in oracle.items()
        }
    )
    tolerances = config.get("tolerances", {})
    _check_keys("tolerances", tolerances, set(Tolerances._fields))
    samples = config.get("samples", {})
    _check_keys("samples", samples, _SAMPLE_KEYS)

    stages = config.get("stages")
    if stages is not None and (
        not isinstance(stages, list) or not all(isinstance(s, str) for s in stages)
    ):
        raise ValueError("`stages` must be a list of stage names.")
    outputs = config.get("outputs", "results")
    if not isinstance(outputs, str):
        raise ValueError(f"`outputs` must be a path string, got {outputs!r}.")
    method = grid.get("method", "cubic")
    if not isinstance(method, str):
        raise ValueError(f"`grid.method` must be a string, got {method!r}.")

    kwargs = {
        "problem": problem,
        "resolution": _number("grid.resolution", grid.get("resolution", 21), integer=True),
        "method": method,
        "oracle": oracle,
        "tolerances": Tolerances.from_dict(tolerances),
        "seed": _number("samples.seed", samples.get("seed", 0), integer=True),
        "sample_count": _number("samples.count", samples.get("count", 100), integer=True),
        "trajectory_count": _number(
            "samples.trajectories", samples.get("trajectories", 5), integer=True
        ),
        "threads": _number("threads", config.get("threads", 1), integer=True),
        "outputs": outputs,
    }
    if stages is not None:
        kwargs["stages"] = tuple(stages)
    return RunConfig(**kwargs)


@log_and_raise((ValueError, FileNotFoundError))
def parse_config(path: PathLike) -> RunConfig:
    """
    Read a JSON run configuration.

    Only `problem.A`, `B`, `Q` and `R` are required; everything else has a
    default (S = 0, no nonlinear terms, epsilon 0.1, resolution 21, all stages).
    Unknown keys are rejected at every level.

    Parameters
    ----------
    path
        Path to the configuration file.

    Returns
    -------
    The run configuration.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    ValueError
        On a JSON syntax error (with line and column) or a semantic violation
        (naming the violated invariant).

    Example
    -------
    >>> cfg = parse_config("configs/p1.json")
    >>> cfg.problem.epsilon
    0.1
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file {path} not found.")
    text = path.read_text()
    try:
        config = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(
            f"Syntax error in {path} at line {e.lineno}, column {e.colno}: {e.msg}."
        ) from e
    cfg = config_from_dict(config)
    logger.info(
        f"Parsed config {path}: n={cfg.problem.n}, m={cfg.problem.m}, "
        f"stages {list(cfg.stages)}."
    )
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    """Return the JSON text of a run configuration, defaults included."""
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"


def _jsonable(value):
    """Convert numpy containers and complex numbers to JSON types; complex as [re, im]."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real):
        return float(value)
    return value


def export_results(report: Report, directory: PathLike | None = None) -> list[Path]:
    """
    Write a (possibly partial) report to disk.

    Files written:
    - results.json: config echo, stage statuses, checks and stage results
      (sorted keys, complex numbers as ``[re, im]``, no timestamps)
    - metadata.json: package version, timestamps and thread count
    - checks.csv: the check table
    - psi_grid.csv, pi_grid.csv, kappa_grid.csv (and the oracle grids): one
      row per node, coordinates then values
    - trajectories.csv: sampled rollouts

    Floats in CSV files are written with 17 significant digits so that
    :func:`read_grid_csv` restores them exactly.

    Parameters
    ----------
    report
        The pipeline report.
    directory
        Output directory, by default the config's `outputs`. Created if needed.

    Returns
    -------
    Paths of the written files.
    """
    directory = Path(report.config.outputs if directory is None else directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    results = directory / "results.json"
    results.write_text(
        json.dumps(_jsonable(report.to_dict()), sort_keys=True, indent=2) + "\n"
    )
    written.append(results)

    metadata = directory / "metadata.json"
    metadata.write_text(
        json.dumps(
            {
                "version": version("dtmanifold"),
                "started": report.started,
                "finished": report.finished,
                "threads": report.config.threads,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    written.append(metadata)

    if report.config.stages:
        checks = directory / "checks.csv"
        report.to_frame().to_csv(checks, index=False, float_format=FLOAT_FORMAT)
        written.append(checks)

    for key, filename in GRID_FILES.items():
        grid = report.artifacts.get(key)
        if grid is None:
            continue
        path = directory / filename
        grid.to_frame(key).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)

    trajectories = report.artifacts.get("trajectories")
    if trajectories is not None:
        path = directory / "trajectories.csv"
        trajectories.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)

    logger.info(f"Wrote {len(written)} files to {directory}.")
    return written


def read_grid_csv(path: PathLike) -> pd.DataFrame:
    """
    Read a grid or trajectory CSV written by :func:`export_results`.

    Floats are parsed with round-trip precision, so the values equal the
    exported binary64 numbers bit for bit.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"File {path} not found.")
    return pd.read_csv(path, float_precision="round_trip")
