import json
import subprocess
import sys

import pytest

from optquant.cli import main, parse_function


def run(args, tmp_path, name="out.txt"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out.read_bytes() if out.exists() else b""


def test_quantize_normal_two(tmp_path):
    code, data = run(["quantize", "--dist", "normal:0,1", "--n", "2"], tmp_path)
    assert code == 0
    lines = data.decode().splitlines()
    assert lines[0].startswith("# dist=normal:0.0,1.0 N=2")
    assert lines[1].startswith("-0.79788")
    assert lines[2].startswith("0.79788")


def test_price_call(tmp_path):
    code, data = run(["price", "--experiment", "call", "--n", "500", "--basis", "lognormal"], tmp_path)
    assert code == 0
    header, row = data.decode().splitlines()
    assert header == "N,estimate,error"
    n, est, err = row.split(",")
    assert abs(float(est) - 34.15007) < 1e-3 and float(err) < 1e-3


def test_cubature_one(tmp_path):
    code, data = run(["cubature", "--dist", "uniform:0,1", "--f", "one", "--n", "10"], tmp_path)
    assert code == 0
    assert data.decode().splitlines()[1].split(",")[1] == "1"


def test_quantize_inspect_round_trip(tmp_path):
    grid = tmp_path / "g.csv"
    assert main(["quantize", "--dist", "lognormal:0.075,0.5", "--n", "40", "--out", str(grid)]) == 0
    code, data = run(["inspect", "--grid", str(grid), "--format", "json"], tmp_path, "i.json")
    assert code == 0
    info = json.loads(data)
    assert info["N"] == 40
    assert abs(info["distortion_stored"] - info["distortion_recomputed"]) <= 1e-12
    assert info["max_weight_diff"] <= 1e-12


def test_mc_cv_zero_lambda_matches_crude(tmp_path):
    base = ["mc-cv", "--seed", "5", "--replications", "6", "--samples", "500"]
    _, crude = run([*base, "--crude"], tmp_path, "c.csv")
    _, zero = run([*base, "--lambda", "0,0"], tmp_path, "z.csv")
    crude_row = crude.decode().splitlines()[1].split(",")
    zero_rows = zero.decode().splitlines()
    assert zero_rows[1].split(",") == crude_row
    assert zero_rows[2].split(",")[1:] == crude_row[1:]


def test_mc_cv_config(tmp_path):
    cfg = {
        "model": {"s0": [100, 90], "r": 0.01, "sigmas": [0.2, 0.3], "corr": [[1, 0.3], [0.3, 1]], "T": 0.5},
        "payoff": {"alphas": [0.5, 0.5], "K": 95},
        "spec": {"basis": "gaussian", "grid_level": 50},
        "M": 400,
        "n": 4,
        "seed": 1,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, data = run(["mc-cv", "--config", str(path), "--format", "json"], tmp_path, "r.json")
    assert code == 0
    rep = json.loads(data)
    assert rep["controlled"]["kind"] == "cv-gaussian"
    assert rep["controlled"]["M"] == 400 and rep["controlled"]["n"] == 4


COMMANDS = [
    ["quantize", "--dist", "exponential:1", "--n", "30"],
    ["cubature", "--dist", "normal:0,1", "--f", "call:0.5", "--levels", "10,20,40,80", "--reference", "0.1978"],
    ["rr", "--dist", "normal:0,1", "--f", "square", "--n", "40", "--format", "json"],
    ["price", "--experiment", "put-on-call", "--levels", "50,100,150,200"],
    ["price", "--experiment", "exchange-spread", "--method", "rr", "--n", "60"],
    ["mc-cv", "--seed", "3", "--replications", "4", "--samples", "300", "--format", "json"],
    ["local-behavior", "--n", "200", "--window=-0.5,0.5"],
]


@pytest.mark.parametrize("cmd", COMMANDS, ids=lambda c: c[0])
def test_byte_identical_reruns(tmp_path, cmd):
    c1, a = run(cmd, tmp_path, "a")
    c2, b = run(cmd, tmp_path, "b")
    assert c1 == c2 == 0
    assert a == b and len(a) > 0


@pytest.mark.parametrize(
    "cmd",
    [
        ["cubature", "--dist", "bogus:1", "--f", "one", "--n", "3"],
        ["cubature", "--dist", "normal:0,1", "--f", "nope", "--n", "3"],
        ["cubature", "--dist", "normal:0,1", "--f", "one", "--levels", "10,20,30,40"],
        ["inspect", "--grid", "/nonexistent/grid.csv"],
        ["price", "--experiment", "call", "--K1", "3", "--n", "10"],
        ["mc-cv", "--config", "/nonexistent.json"],
    ],
)
def test_validation_errors_exit_two(tmp_path, cmd):
    assert main(cmd) == 2


def test_unreadable_grid_store(tmp_path, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("")
    monkeypatch.setenv("QC_GRID_STORE", str(blocker))
    assert main(["cubature", "--dist", "normal:0,1", "--f", "one", "--n", "3"]) == 2


def test_env_overrides_grid_store(tmp_path, monkeypatch):
    env_dir, flag_dir = tmp_path / "env", tmp_path / "flag"
    monkeypatch.setenv("QC_GRID_STORE", str(env_dir))
    assert main(["cubature", "--dist", "exponential:1", "--f", "one", "--n", "5", "--grid-store", str(flag_dir)]) == 0
    assert list(env_dir.iterdir()) and not flag_dir.exists()


def test_numerical_failure_exits_one(tmp_path):
    assert main(["quantize", "--dist", "normal:0,1", "--n", "300", "--max-iter", "1"]) == 1


def test_argparse_errors_exit_two():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_named_functions():
    import numpy as np

    x = np.array([-1.0, 0.5, 2.0])
    assert parse_function("one")(x).tolist() == [1, 1, 1]
    assert parse_function("identity")(x).tolist() == x.tolist()
    assert parse_function("square")(x).tolist() == [1, 0.25, 4]
    assert parse_function("call:1")(x).tolist() == [0, 0, 1]
    assert parse_function("put:1")(x).tolist() == [2, 0.5, 0]
    assert parse_function("digital:0")(x).tolist() == [0, 1, 1]
    assert parse_function("abs-pow:1.5")(x) == pytest.approx([1, 0.5**1.5, 2**1.5])


def test_console_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "optquant.cli", "cubature", "--dist", "uniform:0,1", "--f", "square", "--n", "4"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.splitlines()[0] == "N,estimate,error"
