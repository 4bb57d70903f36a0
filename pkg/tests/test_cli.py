import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from phisolver.cli import main
from phisolver.config import SCHEMA_VERSION, RunConfig
from phisolver.experiment import CSV_COLUMNS, build_problem, dense_oracle

SMALL = ["--problem", "laplacian2d", "--N", "8", "--scale", "0.025", "--t", "1", "--k", "20"]


@pytest.fixture
def cli(tmp_path):
    log = str(tmp_path / "cli.log")

    def invoke(*args):
        return main(["--log", log, *args])

    return invoke


def test_run_converges(cli, capsys):
    code = cli("run", *SMALL, "--ells", "0,1", "--method", "trha", "--oracle", "dense")
    out = capsys.readouterr().out
    assert code == 0
    assert "converged=True" in out
    assert "ell=0" in out and "ell=1" in out
    assert "error=" in out


def test_empty_ell_item_names_flag(cli, capsys):
    code = cli("run", *SMALL, "--ells", "1,,3")
    err = capsys.readouterr().err
    assert code == 1
    assert "--ells" in err


@pytest.mark.parametrize("args, flag", [
    (["--method", "lanczos"], "--method"),
    (["--k", "5", "--q", "4"], "restart needs"),
    (["--gamma", "abc"], "--gamma"),
    (["--problem", "heat3d"], "--problem"),
])
def test_bad_config_exit_1(cli, capsys, args, flag):
    assert cli("run", *SMALL, *args) == 1
    assert flag in capsys.readouterr().err


def test_unknown_option_exit_1(cli, capsys):
    with pytest.raises(SystemExit) as exc_info:
        cli("run", "--no-such-flag")
    assert exc_info.value.code == 1


def test_missing_matrix_file(cli, tmp_path, capsys):
    code = cli("run", "--problem", f"mtx:{tmp_path / 'absent.mtx'}", "--method", "arnoldi")
    assert code == 1
    assert "phisolver: error" in capsys.readouterr().err


def test_max_cycles_exit_2(cli, capsys):
    code = cli("run", *SMALL[:-2], "--k", "5", "--q", "2", "--tol", "1e-14", "--max-cycles", "1", "--method", "tra")
    captured = capsys.readouterr()
    assert code == 2
    assert "not converged after 1 cycles" in captured.err


def test_json_report(cli, tmp_path):
    path = tmp_path / "run.json"
    assert cli("run", *SMALL, "--ells", "1,2", "--method", "harmonic", "-o", str(path)) == 0
    data = json.loads(path.read_text())
    assert data["schema_version"] == SCHEMA_VERSION
    assert data["config"]["method"] == "harmonic"
    assert [r["ell"] for r in data["results"]] == [1, 2]
    assert data["matvecs"] == 20
    assert len(data["problem_hash"]) == 16


def test_csv_report_and_bounds(cli, tmp_path):
    path = tmp_path / "run.csv"
    assert cli("run", *SMALL, "--ells", "0,1", "--method", "arnoldi", "--bounds", "-o", str(path)) == 0
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    assert reader.fieldnames == CSV_COLUMNS
    assert [r["ell"] for r in rows] == ["0", "1"]
    for row in rows:
        assert row["schema_version"] == SCHEMA_VERSION
        assert float(row["bound_closed"]) > 0
        assert float(row["bound_integral"]) > 0


def test_runs_are_deterministic(cli, tmp_path):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        assert cli("run", *SMALL, "--ells", "0,3", "--method", "tra", "--vector", "random", "--seed", "7",
                   "-o", str(p)) == 0
    a, b = (json.loads(p.read_text()) for p in paths)
    for key in ("problem_hash", "cycles", "matvecs", "results", "residual_history", "q_history"):
        assert a[key] == b[key]


def test_compare_sequential_savings(cli, tmp_path, capsys):
    path = tmp_path / "cmp.json"
    code = cli("compare", *SMALL[:-2], "--k", "10", "--q", "3", "--ells", "1,2",
               "--method", "tra,trha", "--sequential", "-o", str(path))
    out = capsys.readouterr().out
    assert code == 0
    assert "problem hash" in out
    assert out.count("Mv(simultaneous [1, 2])") == 2

    table = json.loads(path.read_text())
    assert len(table["rows"]) == 6
    assert len({row["problem_hash"] for row in table["rows"]}) == 1
    assert len(table["savings"]) == 2


def test_compare_needs_two_configs(cli, capsys):
    assert cli("compare", *SMALL, "--method", "trha") == 1
    assert "at least two" in capsys.readouterr().err


def test_run_stored_in_db(cli, tmp_path):
    from phisolver.store import RunStore

    url = f"sqlite:///{tmp_path / 'runs.db'}"
    assert cli("run", *SMALL, "--method", "arnoldi", "--db", url) == 0
    rows = RunStore(url).list()
    assert len(rows) == 1
    assert rows[0]["method"] == "arnoldi"


def test_scaled_solutions_file(cli, tmp_path):
    """
    --solutions пишет phi_l(-tA)v, с --scaled домноженные на t^l
    """
    args = ["run", "--problem", "laplacian2d", "--N", "6", "--scale", "0.025", "--t", "2",
            "--k", "20", "--ells", "0,2", "--method", "arnoldi"]
    plain, scaled = tmp_path / "plain.npz", tmp_path / "scaled.npz"
    assert cli(*args, "--solutions", str(plain), "-o", str(tmp_path / "plain.json")) == 0
    assert cli(*args, "--scaled", "--solutions", str(scaled), "-o", str(tmp_path / "scaled.json")) == 0

    A, v = build_problem(RunConfig(problem="laplacian2d", N=6, scale=0.025))
    exact = dense_oracle(A, v, 2.0, [0, 2])
    with np.load(plain) as p, np.load(scaled) as s:
        assert not bool(p["scaled"]) and bool(s["scaled"])
        assert float(s["t"]) == 2.0
        assert_allclose(p["phi_2"], exact[2], rtol=1e-6)
        assert_allclose(s["phi_0"], p["phi_0"])
        assert_allclose(s["phi_2"], 4.0 * p["phi_2"])

    norms = [{r["ell"]: r["solution_norm"] for r in json.loads((tmp_path / name).read_text())["results"]}
             for name in ("plain.json", "scaled.json")]
    assert norms[1][0] == pytest.approx(norms[0][0])
    assert norms[1][2] == pytest.approx(4.0 * norms[0][2])
