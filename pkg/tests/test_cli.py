import csv
import io
import json
import subprocess
import sys

import pytest

from slowdown.cli import dumps, run_cli

MODEL = ["--servers", "15", "--lambda", "15", "--rho-fast", "0.7", "--rho-slow", "0.98"]


def _run(capsys, argv):
    code = run_cli(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_json(capsys):
    code, out, _ = _run(capsys, ["solve", *MODEL, "--format", "json"])
    assert code == 0
    doc = json.loads(out)
    assert doc["schema_version"] == 1
    assert set(doc["params"]) == {"s", "lambda", "mu_fast", "mu_slow", "rho_fast", "rho_slow"}
    res = doc["results"]
    assert {"p_wait", "mean_queue", "mean_system", "rho", "rho_minus_rho_fast"} <= set(res)
    assert res["p_wait"] == pytest.approx(0.6317862821568949, rel=1e-12)


def test_json_round_trip_is_byte_identical(capsys):
    _, out, _ = _run(capsys, ["solve", *MODEL])
    assert dumps(json.loads(out)) + "\n" == out


def test_floats_have_17_digits(capsys):
    _, out, _ = _run(capsys, ["solve", *MODEL])
    assert '"rho_fast": 0.69999999999999996' in out


def test_identical_invocations(capsys):
    argv = ["simulate", "-s", "4", "--lambda", "4", "--rho-fast", "0.6", "--rho-slow", "0.9",
            "--horizon", "5000", "--seed", "3"]
    first = _run(capsys, argv)[1]
    assert _run(capsys, argv)[1] == first


def test_dimension(capsys):
    code, out, _ = _run(capsys, ["dimension", "--mu-fast", "1", "--mu-slow", "0.9", "--lambda", "10",
                                 "--target", "0.1"])
    assert code == 0
    assert json.loads(out)["results"] == {"s_fast": 16, "s_slowdown": 16}


def test_qed_csv(capsys):
    code, out, _ = _run(capsys, ["qed", "--beta", "0.5", "--gamma", "0.5", "--s", "25,50"])
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["s", "p_wait_fast", "p_wait_slowdown", "p_wait_slow", "lower", "upper"]
    assert len(rows) == 3 and all(len(r) == 6 for r in rows)


def test_marginal_and_heatmap_csv(capsys):
    _, out, _ = _run(capsys, ["marginal", *MODEL, "--i-max", "40"])
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["i", "probability"] and len(rows) == 42
    _, out, _ = _run(capsys, ["heatmap", "-s", "3", "--lambda", "2", "--mu-fast", "2", "--mu-slow", "1",
                              "--i-max", "5"])
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["i", "j", "probability"]
    assert len(rows) - 1 == 1 + 2 + 3 + 4 * 3
    assert sum(float(r[2]) for r in rows[1:]) < 1


def test_finite_buffer_and_abandon(capsys):
    code, out, _ = _run(capsys, ["finite-buffer", "-s", "81", "--lambda", "81", "--rho-fast", "0.8",
                                 "--rho-slow", "1.08", "--buffer", "93"])
    assert code == 0
    assert len(json.loads(out)["results"]["modes"]) == 2
    code, out, _ = _run(capsys, ["abandon", "-s", "3", "--lambda", "3", "--rho-fast", "0.6",
                                 "--rho-slow", "1.5", "--delta", "0.5", "--format", "csv"])
    assert code == 0 and out.startswith("i,probability\n")


def test_couple(capsys):
    code, out, _ = _run(capsys, ["couple", *MODEL, "--customers", "2000", "--seeds", "2"])
    res = json.loads(out)["results"]
    assert code == 0 and res["customers_checked"] == 4000
    assert res["violations_WS_ge_W"] == res["violations_X_ge_XF"] == 0


def test_simulate_path_export(capsys, tmp_path):
    path = tmp_path / "p.csv"
    code, _, _ = _run(capsys, ["simulate", "-s", "2", "--lambda", "1", "--mu-fast", "2", "--mu-slow", "1",
                               "--horizon", "100", "--path-csv", str(path)])
    assert code == 0
    assert path.read_text().startswith("time,total_customers,nondelayed_in_service\n")


def test_output_file(capsys, tmp_path):
    target = tmp_path / "out.json"
    assert run_cli(["solve", *MODEL, "-o", str(target)]) == 0
    assert capsys.readouterr().out == ""
    assert json.loads(target.read_text())["results"]["mean_system"] > 0


@pytest.mark.parametrize(
    "argv,flag",
    [
        (["solve", "--servers", "0", "--lambda", "1", "--mu-fast", "2", "--mu-slow", "1"], "--servers"),
        (["solve", "-s", "2", "--lambda", "-1", "--mu-fast", "2", "--mu-slow", "1"], "--lambda"),
        (["solve", "-s", "2", "--lambda", "1", "--mu-fast", "2", "--rho-slow", "0.9"], "mutually exclusive"),
        (["solve", "-s", "2", "--lambda", "1", "--mu-fast", "2"], "--mu-slow"),
        (["solve", "-s", "2", "--lambda", "1", "--mu-fast", "1", "--mu-slow", "2"], "--mu-fast"),
        (["solve", "-s", "2", "--lambda", "3", "--mu-fast", "2", "--mu-slow", "1"], "--mu-slow"),
        (["dimension", "--mu-fast", "1", "--mu-slow", "0.9", "--lambda", "10", "--target", "1.5"], "--target"),
        (["finite-buffer", *MODEL, "--buffer", "3"], "--buffer"),
        (["abandon", *MODEL, "--delta", "0"], "--delta"),
        (["qed", "--beta", "4", "--gamma", "1", "--s", "9"], "--s"),
    ],
)
def test_validation_errors_exit_2(capsys, argv, flag):
    code, out, err = _run(capsys, argv)
    assert code == 2 and out == ""
    assert flag in err


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli(["validate", "--tier", "huge"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run_cli(["solve", "--bogus"])
    assert exc.value.code == 2


def test_numerical_failure_exit_1(capsys, monkeypatch):
    from slowdown import cli
    from slowdown.model import NumericalError

    def boom(params):
        raise NumericalError("forced", stage="psi_table")

    monkeypatch.setattr(cli, "solve_stationary", boom)
    code, _, err = _run(capsys, ["solve", *MODEL])
    assert code == 1 and "[psi_table]" in err


def test_validate_quick(capsys):
    code, out, _ = _run(capsys, ["validate", "--tier", "quick"])
    assert code == 0
    assert out.strip().endswith("checks passed")
    assert "FAIL" not in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "slowdown", "dimension", "--mu-fast", "1", "--mu-slow", "0.7",
                          "--lambda", "20", "--target", "0.5", "--format", "csv"],
                         capture_output=True, text=True, check=True)
    assert res.stdout.splitlines()[1].endswith(",23,29")
