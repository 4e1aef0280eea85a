import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from avcat import cli
from avcat.errors import DivergenceError

ZERO_SYSTEM = "system zero\ndim n=1 k=1\nperiod T=2*pi\norder 1: 0\norder 2: 0\nend\n"


def run(args, tmp_path):
    try:
        return cli.main(list(args) + ["--out", str(tmp_path)])
    except SystemExit as exc:
        return exc.code


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_average_fold(tmp_path, capsys):
    assert run(["average", "--system", "fold"], tmp_path) == 0
    summary = json.loads((tmp_path / "average.json").read_text())
    assert summary["ell"] == 1 and json.loads(capsys.readouterr().out)["ell"] == 1
    rows = read_csv(tmp_path / "average.csv")
    assert rows[0] == ["order", "z1", "mu1", "g1"]
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    np.testing.assert_allclose(body[:, 3], body[:, 1] ** 2 + body[:, 2], atol=1e-10)


def test_average_pitchfork_and_grid(tmp_path):
    assert run(["average", "--system", "pitchfork", "--grid", "6"], tmp_path) == 0
    summary = json.loads((tmp_path / "average.json").read_text())
    assert summary["ell"] == 2
    rows = read_csv(tmp_path / "average.csv")
    assert len(rows) == 1 + 2 * 36


def test_average_zero_system_is_math_failure(tmp_path):
    path = tmp_path / "zero.sys"
    path.write_text(ZERO_SYSTEM)
    assert run(["average", "--system", str(path)], tmp_path) == 2


@pytest.mark.parametrize("argv", [
    ["average"],
    ["frobnicate", "--system", "fold"],
    ["average", "--system", "nosuchsystem"],
    ["average", "--system", "transcritical", "--param", "c"],
    ["average", "--system", "transcritical", "--param", "d=1"],
    ["scan", "--system", "saddlefocus"],
    ["verify", "--check", "nonsense"],
    ["scan", "--system", "fold", "--x-min", "1", "--x-max", "0"],
])
def test_usage_errors(argv, tmp_path):
    assert run(argv, tmp_path) == 1


def test_config_overrides_flags(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"system": "transcritical", "eps": -0.02, "mu": 0.0, "param": ["c=1"]}))
    assert run(["scan", "--system", "fold", "--eps", "0.3", "--config", str(cfg)], tmp_path) == 0
    out = json.loads((tmp_path / "scan.json").read_text())
    assert out["system"] == "transcritical" and out["eps"] == -0.02 and out["count"] == 2


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"unknown_key": 1}))
    assert run(["average", "--system", "fold", "--config", str(bad)], tmp_path) == 1
    assert run(["average", "--system", "fold", "--config", str(tmp_path / "missing.json")], tmp_path) == 1


def test_scan_counts(tmp_path):
    base = ["scan", "--system", "transcritical", "--param", "c=1", "--mu", "0",
            "--x-min", "-0.5", "--x-max", "0.5"]
    assert run(base + ["--eps", "0.02"], tmp_path) == 0
    assert json.loads((tmp_path / "scan.json").read_text())["count"] == 0
    assert run(base + ["--eps", "-0.02"], tmp_path) == 0
    assert json.loads((tmp_path / "scan.json").read_text())["count"] == 2


def test_continue_writes_branches_and_folds(tmp_path):
    assert run(["continue", "--system", "fold", "--eps", "0.1"], tmp_path) == 0
    rows = read_csv(tmp_path / "branches.csv")
    assert rows[0] == ["branch", "s", "mu", "eps", "x1", "stability", "test_fold", "eig1_modulus"]
    s = np.array([float(r[1]) for r in rows[1:]])
    assert np.all(np.diff(s) > 0)
    assert {r[5] for r in rows[1:]} <= {"stable", "unstable", "nonhyperbolic"}
    folds = json.loads((tmp_path / "folds.json").read_text())["folds"]
    assert len(folds) == 1 and abs(folds[0]["mu"]) < 0.15
    assert {"mu", "x", "F1", "F2"} <= set(folds[0])


def test_sweep_writes_surface(tmp_path):
    assert run(["sweep", "--system", "fold", "--eps", "0,0.1", "--grid", "21"], tmp_path) == 0
    rows = read_csv(tmp_path / "surface.csv")
    assert rows[0] == ["eps", "mu", "x1", "provenance"]
    eps = [float(r[0]) for r in rows[1:]]
    assert eps == sorted(eps) and set(eps) == {0.0, 0.1}
    assert all(r[3] == "scan" for r in rows[1:])


def test_failed_check_exits_with_math_code(tmp_path):
    argv = ["verify", "--check", "closeness", "--system", "fold", "--mu-min", "0.3", "--mu-max", "1",
            "--eps", "0.001,0.01,0.03,0.1"]
    assert run(argv, tmp_path) == 2
    result = json.loads((tmp_path / "verify-closeness.json").read_text())
    assert result["pass"] is False
    assert (tmp_path / "closeness.dat").read_text() == "# eps distance\n"


def test_divergence_maps_to_numeric_code(tmp_path, monkeypatch):
    def boom(args):
        raise DivergenceError("state norm exceeded", 1.0, [1e7])

    monkeypatch.setitem(cli.COMMANDS, "average", boom)
    assert run(["average", "--system", "fold"], tmp_path) == 3


def test_console_script_is_installed():
    exe = shutil.which("avcat")
    assert exe is not None
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "verify" in proc.stdout
