import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from drot import io as mio
from drot.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, RunConfig, load_config, main


@pytest.fixture
def swap_files(tmp_path):
    (tmp_path / "c.csv").write_text("0,1\n1,0\n")
    (tmp_path / "p.csv").write_text("0.7\n0.3\n")
    (tmp_path / "q.csv").write_text("0.4\n0.6\n")
    return tmp_path


def solve_args(d, *extra):
    return ["solve", "--cost", str(d / "c.csv"), "--p", str(d / "p.csv"), "--q", str(d / "q.csv"), *extra]


def test_solve_swap_instance(swap_files, capsys):
    out = swap_files / "out"
    rc = main(solve_args(swap_files, "--tol-primal", "1e-9", "--tol-dual", "1e-9", "--tol-gap", "1e-9",
                         "--out", str(out), "--trace"))
    assert rc == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "converged"
    assert abs(summary["objective"] - 0.3) <= 1e-6
    plan = mio.read_matrix(out / "plan.otmx")
    np.testing.assert_allclose(plan, [[0.4, 0.3], [0.0, 0.3]], atol=1e-6)
    assert mio.read_vector(out / "mu.otmx").shape == (2,)
    rows = [json.loads(line) for line in (out / "trace.jsonl").read_text().splitlines()]
    assert len(rows) == summary["iterations"]
    assert json.loads(capsys.readouterr().out)["status"] == "converged"


@pytest.mark.parametrize("solver", ["drot-fused", "dr-reference", "admm-reference", "sinkhorn"])
def test_solve_each_solver(swap_files, solver):
    out = swap_files / solver
    extra = ["--eta", "0.1"] if solver == "sinkhorn" else []
    rc = main(solve_args(swap_files, "--solver", solver, "--out", str(out), *extra))
    assert rc == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["solver"] == solver
    assert abs(summary["objective"] - 0.3) <= 1e-2


def test_sinkhorn_f32_numerical_failure(tmp_path, capsys):
    gen = json.dumps({"m": 64, "n": 64, "seed": 0})
    rc = main(["solve", "--gen", gen, "--solver", "sinkhorn", "--eta", "1e-4", "--precision", "f32",
               "--out", str(tmp_path)])
    assert rc == EXIT_NUMERICAL
    assert json.loads((tmp_path / "summary.json").read_text())["reason"] == "numerical failure"
    assert json.loads(capsys.readouterr().err)["error"] == "numerical failure"


def test_missing_file(tmp_path, capsys):
    rc = main(["solve", "--cost", str(tmp_path / "nope.otmx"), "--p", "x", "--q", "y", "--out", str(tmp_path)])
    assert rc == EXIT_IO
    assert capsys.readouterr().err


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--solver", "simplex"])
    assert exc.value.code == 2


def test_reference_solver_rejects_f32(swap_files):
    assert main(solve_args(swap_files, "--solver", "dr-reference", "--precision", "f32",
                           "--out", str(swap_files))) == EXIT_IO


def test_config_file_and_flag_override(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"solver": "sinkhorn", "eta": 0.5, "max_iters": 77}))
    cfg = load_config(str(path), {"eta": 0.25, "max_iters": None})
    assert (cfg.solver, cfg.eta, cfg.max_iters) == ("sinkhorn", 0.25, 77)
    assert cfg.rho0 == RunConfig().rho0
    path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValueError):
        load_config(str(path), {})


def test_gen_then_solve(tmp_path):
    assert main(["gen", "--m", "5", "--n", "4", "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    assert mio.read_matrix(tmp_path / "cost.otmx").shape == (5, 4)
    assert json.loads((tmp_path / "spec.json").read_text())["seed"] == 3
    out = tmp_path / "sol"
    rc = main(["solve", "--cost", str(tmp_path / "cost.otmx"), "--p", str(tmp_path / "p.otmx"),
               "--q", str(tmp_path / "q.otmx"), "--out", str(out)])
    assert rc == EXIT_OK


def test_solve_is_deterministic(tmp_path):
    gen = json.dumps({"m": 9, "n": 7, "seed": 11})
    for name in ("a", "b"):
        assert main(["solve", "--gen", gen, "--workers", "1" if name == "a" else "3",
                     "--out", str(tmp_path / name)]) == EXIT_OK
    for f in ("plan.otmx", "mu.otmx", "nu.otmx"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    sa, sb = (json.loads((tmp_path / d / "summary.json").read_text()) for d in "ab")
    sa.pop("wall_time"), sb.pop("wall_time")
    assert sa == sb


def test_profile_empty_solver_list(capsys):
    assert main(["profile", "--solvers", "", "--count", "2"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines == ["solver,eps,fraction,solved,total,failures,reference"]


def test_profile_small(tmp_path):
    path = tmp_path / "p.csv"
    rc = main(["profile", "--count", "3", "--m", "6", "--n", "6", "--eps", "1e-2,1e-4",
               "--solvers", "drot,sinkhorn:eta=1e-4:precision=f32", "--csv", str(path)])
    assert rc == EXIT_OK
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 4 and {r["reference"] for r in rows} == {"lp_exact"}
    assert all(0.0 <= float(r["fraction"]) <= 1.0 for r in rows)


def test_bench_one_row(capsys):
    assert main(["bench", "--dims", "16", "--solvers", "drot-fused", "--runs", "1", "--iters", "3"]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1 and rows[0]["solver"] == "drot-fused" and float(rows[0]["median_s"]) > 0


def test_color_transfer_command(tmp_path):
    rng = np.random.default_rng(0)
    from drot.color import save_rgb
    save_rgb(tmp_path / "s.png", rng.random((8, 8, 3)))
    save_rgb(tmp_path / "t.png", rng.random((8, 8, 3)))
    rc = main(["color-transfer", "--source", str(tmp_path / "s.png"), "--target", str(tmp_path / "t.png"),
               "--k", "5", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    stats = json.loads((tmp_path / "color_transfer.json").read_text())
    assert stats["plan_shape"] == [5, 5] and (tmp_path / "transfer.png").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "drot", "solve", "--cost", str(tmp_path / "missing.csv"),
                           "--p", "a", "--q", "b"], capture_output=True, text=True)
    assert proc.returncode == EXIT_IO
