import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from krigrmc import cli
from krigrmc.config import ConfigError, parse_text
from oracles import sobol_points

PUT2D = """\
name: tiny
model: {kind: gbm, r: 0.06, sigma: [0.2, 0.2], x0: [40.0, 40.0]}
contract: {family: basket-put, strike: 40.0}
grid: {maturity: 1.0, n_exercise: 25}
method:
  kind: kriging
  design: DESIGN
  n_sim: 3000
  reps: 100
domain: {lower: [25.0, 25.0], upper: [40.0, 40.0]}
n_out: 2000
"""

PUT1D = """\
model: {kind: gbm, r: 0.06, sigma: 0.2, x0: [40.0]}
contract:
  family: put
  strike: 40.0
grid: {maturity: 1.0, n_exercise: 5}
method: {kind: kriging, design: lhs, n_sim: 500, reps: 50}
domain: {lower: [25.0], upper: [40.0]}
n_out: 1000
replications: 2
"""


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_missing_strike_exit_2_with_line(tmp_path, capsys):
    path = write(tmp_path, PUT1D.replace("  strike: 40.0\n", ""))
    assert cli.main(["price", path]) == 2
    assert f"{path}:3:" in capsys.readouterr().err


def test_replications_zero_exit_2(tmp_path, capsys):
    path = write(tmp_path, PUT1D.replace("replications: 2", "replications: 0"))
    assert cli.main(["price", path]) == 2
    assert f"{path}:9:" in capsys.readouterr().err
    assert cli.main(["price", write(tmp_path, PUT1D, "ok.yaml"), "--replications", "0"]) == 2


@pytest.mark.parametrize("edit,line", [
    (("n_out: 1000", "n_out: 1000\nbogus: 1"), 9),
    (("reps: 50}", "reps: 50, degree: 3}"), 6),
    (("n_sim: 500", "n_sim: 10"), 6),
    (("lower: [25.0]", "lower: [45.0]"), 7),
    (("x0: [40.0]", "x0: [-40.0]"), 1),
    (("sigma: 0.2", "sigma: [0.2, 0.3]"), 1),
    (("family: put", "family: straddle"), 3),
    (("  strike: 40.0", "  strike: 40.0\n  strike: 41.0"), 5),
    (("grid: {", "grid: {{"), None),
])
def test_invalid_configs_are_line_anchored(edit, line):
    with pytest.raises(ConfigError) as exc:
        parse_text(PUT1D.replace(*edit), "c.yaml")
    if line is not None:
        assert exc.value.line == line
    assert str(exc.value).startswith("c.yaml:")


def test_missing_file_and_unknown_suite(capsys):
    assert cli.main(["price", "/nonexistent/config.yaml"]) == 2
    assert cli.main(["bench", "table9"]) == 2


def test_fit_failure_exit_3(tmp_path, monkeypatch, capsys):
    from krigrmc.kriging import FitFailure, StochasticKriging

    def fail(self, *a, **k):
        raise FitFailure("covariance matrix is not positive definite after maximal jitter")

    monkeypatch.setattr(StochasticKriging, "fit", fail)
    assert cli.main(["price", write(tmp_path, PUT1D)]) == 3
    assert "surrogate fit failed" in capsys.readouterr().err


def test_price_summary_is_reproducible(tmp_path):
    path = write(tmp_path, PUT1D)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(["price", path, "--seed", "4", "--out", str(a), "--diagnostics", str(tmp_path / "d.csv")]) == 0
    assert cli.main(["price", path, "--seed", "4", "--out", str(b)]) == 0
    ja, jb = json.loads(a.read_text()), json.loads(b.read_text())
    assert ja.pop("wall_time") >= 0 and jb.pop("wall_time") >= 0
    assert json.dumps(ja, sort_keys=True) == json.dumps(jb, sort_keys=True)
    assert ja["replications"] == 2 and ja["sd"] is not None and [r["seed"] for r in ja["runs"]] == [4, 5]
    assert len(ja["L_hat"]) == 4 and all(v >= 0 for v in ja["L_hat"].values())
    # design: 10 sites x 50 reps from each interior date to T; valuation: n_out paths over every date
    assert ja["n_sims"] == sum(500 * (5 - k) for k in range(1, 5)) + 1000 * 5
    rows = read_csv(tmp_path / "d.csv")
    assert rows[0] == ["t", "x1", "ybar", "var", "M", "m", "v", "h", "loss", "weight"] and len(rows) == 41


def test_env_seed(tmp_path, monkeypatch):
    path = write(tmp_path, PUT1D.replace("replications: 2", "replications: 1"))
    monkeypatch.setenv(cli.SEED_ENV, "7")
    out = tmp_path / "s.json"
    cli.main(["price", path, "--out", str(out)])
    assert json.loads(out.read_text())["seed"] == 7
    cli.main(["price", path, "--seed", "3", "--out", str(out)])
    assert json.loads(out.read_text())["seed"] == 3
    monkeypatch.setenv(cli.SEED_ENV, "x")
    assert cli.main(["price", path]) == 2


def test_export_design_lhs(tmp_path):
    path = write(tmp_path, PUT2D.replace("DESIGN", "lhs"))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["export-design", path, "--t", "0.96", "--out", str(a)]) == 0
    assert cli.main(["export-design", path, "--t", "0.96", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = read_csv(a)
    assert rows[0] == ["x1", "x2", "ybar", "var", "M"] and len(rows) == 31
    x = np.array([[float(v) for v in r[:2]] for r in rows[1:]])
    assert np.all((x >= 25) & (x <= 40))
    assert all(r[4] == "100" for r in rows[1:])


def test_export_design_sobol_midpoint(tmp_path):
    path = write(tmp_path, PUT2D.replace("DESIGN", "sobol"))
    out = tmp_path / "s.csv"
    assert cli.main(["export-design", path, "--t", "0.96", "--out", str(out)]) == 0
    x = np.array([[float(v) for v in r[:2]] for r in read_csv(out)[1:]])
    np.testing.assert_array_equal(x[0], [32.5, 32.5])
    np.testing.assert_array_equal(x, 25 + 15 * sobol_points(30, 2))


def test_export_design_rejects_bad_date(tmp_path):
    path = write(tmp_path, PUT2D.replace("DESIGN", "lhs"))
    assert cli.main(["export-design", path, "--t", "0.97"]) == 2
    assert cli.main(["export-design", path, "--t", "1.0"]) == 2


def test_bundled_configs_parse():
    names = cli.bundled_names()
    assert {"put1d", "put2d-sobol", "maxcall3d-sobol", "sv5-lhs", "sv5-bw11"} <= set(names)
    for suite in cli.SUITES.values():
        assert set(suite) <= set(names)
    for name in names:
        rc = cli.load_config(name)
        assert rc.name == name and rc.replications >= 1


def test_bench_writes_table(tmp_path, monkeypatch):
    monkeypatch.setitem(cli.SUITES, "mini", ["put1d"])
    out = tmp_path / "b.csv"
    assert cli.main(["bench", "mini", "--n-out", "2000", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["config", "method", "V", "SE", "sd", "runs", "reference", "n_sims", "wall_time"]
    assert rows[1][0] == "put1d" and rows[1][6] == "2.314"


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "krigrmc.cli", "list"], capture_output=True, text=True)
    assert res.returncode == 0 and "put1d" in res.stdout.split()
