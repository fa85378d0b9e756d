import csv
import json
import subprocess
import sys

import pytest

from perishable.cli import main

CONFIG = """
[demand]
kind = poisson
mean = 10

[costs]
h = 1
r = 5
theta = {theta}

[structure]
m = {m}

[simulation]
periods = 40000
burn_in = 1000
curve_periods = 20000
seed = 3

[sweep]
rows = 0:5:5, 1:5:5

[output]
dir = {out}
"""


def write_config(tmp_path, name="run.ini", theta=5, m=2, out=None):
    path = tmp_path / name
    path.write_text(CONFIG.format(theta=theta, m=m, out=out or tmp_path / "out"))
    return str(path)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def error_line(err):
    lines = [ln for ln in err.splitlines() if ln.startswith("{")]
    assert len(lines) == 1
    return json.loads(lines[0])


def test_preprocess_cache(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out, _ = run(["preprocess", "--config", cfg, "-q"], capsys)
    assert code == 0 and out.strip().endswith("hit=0")
    code, out, _ = run(["preprocess", "--config", cfg, "-q"], capsys)
    assert code == 0 and out.strip().endswith("hit=1")
    # costs do not enter the cache key
    other = write_config(tmp_path, "theta.ini", theta=20)
    code, out, _ = run(["preprocess", "--config", other, "-q"], capsys)
    assert out.strip().endswith("hit=1")
    # the lifetime does
    other = write_config(tmp_path, "m3.ini", m=3)
    code, out, _ = run(["preprocess", "--config", other, "-q"], capsys)
    assert out.strip().endswith("hit=0")
    code, out, _ = run(["preprocess", "--config", cfg, "--force", "-q"], capsys)
    assert out.strip().endswith("hit=0")
    code, out, _ = run(["preprocess", "--config", cfg, "--seed", "4", "-q"], capsys)
    assert out.strip().endswith("hit=0")


def test_corrupt_cache_is_rebuilt(tmp_path, capsys, caplog):
    cfg = write_config(tmp_path)
    run(["preprocess", "--config", cfg, "-q"], capsys)
    cache = next((tmp_path / "out" / "cache").iterdir())
    (cache / "curve.npz").write_bytes(b"garbage")
    code, out, _ = run(["preprocess", "--config", cfg], capsys)
    assert code == 0 and out.strip().endswith("hit=0")
    assert "rebuilding" in caplog.text


def test_solve_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out, _ = run(["solve", "--config", cfg, "-q"], capsys)
    assert code == 0
    assert "tau=13\n" in out
    inst = tmp_path / "out" / "poisson-m2-l0-h1-r5-th5"
    for name in ("policy_table.csv", "order_amounts.csv", "report.txt", "report.csv",
                 "cbs_curve.csv", "mc_mb_x0.csv"):
        assert (inst / name).stat().st_size > 0
    rows = list(csv.DictReader(open(inst / "report.csv")))
    assert rows[0]["tau"] == "13"
    for key in ("cbs_cost", "w_ex", "n_w", "L_h"):
        assert rows[0][key + "_se"] != ""


def test_determinism_byte_identical(tmp_path, capsys):
    outs = []
    for k in range(2):
        cfg = write_config(tmp_path, f"r{k}.ini", out=tmp_path / f"o{k}")
        assert run(["compare", "--config", cfg, "--with-dp", "-q"], capsys)[0] == 0
        outs.append(tmp_path / f"o{k}" / "poisson-m2-l0-h1-r5-th5")
    # a cache hit reproduces the same bytes
    assert run(["compare", "--config", str(tmp_path / "r0.ini"), "--with-dp", "-q"],
               capsys)[0] == 0
    names = sorted(p.name for p in outs[0].iterdir())
    assert "compare.csv" in names and "dp_policy.csv" in names
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_compare_without_dp(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out, _ = run(["compare", "--config", cfg, "-q"], capsys)
    assert code == 0 and "baseline=cbs" in out and "delta=" in out


def test_dp_command(tmp_path, capsys):
    cfg = write_config(tmp_path, m=3)
    code, out, _ = run(["dp", "--config", cfg, "-q"], capsys)
    assert code == 0
    vals = dict(ln.split("=", 1) for ln in out.splitlines())
    assert float(vals["gain"]) == pytest.approx(4.932, rel=0.02)
    inst = tmp_path / "out" / "poisson-m3-l0-h1-r5-th5"
    assert (inst / "dp_order_amounts.csv").read_text().startswith("x2,order\n")


def test_sweep(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out, _ = run(["sweep", "--config", cfg, "--with-dp", "-q"], capsys)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "sweep.csv")))
    assert [(r["h"], r["r"], r["theta"]) for r in rows] == [("0", "5", "5"), ("1", "5", "5")]
    assert all(r["dp_gain"] and r["delta"] and r["delta_se"] for r in rows)


def test_error_lines(tmp_path, capsys):
    code, _, err = run(["solve", "--config", str(tmp_path / "missing.ini")], capsys)
    assert code == 2 and error_line(err)["error"] == "ConfigError"
    bad = tmp_path / "bad.ini"
    bad.write_text(CONFIG.format(theta=5, m=2, out=tmp_path) + "[solver]\nbogus = 1\n")
    code, _, err = run(["solve", "--config", str(bad)], capsys)
    assert code == 2 and "bogus" in error_line(err)["message"]
    cfg = write_config(tmp_path, m=4)
    code, _, err = run(["dp", "--config", cfg, "-q"], capsys)
    line = error_line(err)
    assert code == 1 and line["error"] == "UnsupportedError" and line["command"] == "dp"
    code, _, err = run(["compare", "--config", cfg, "--with-dp", "-q"], capsys)
    assert code == 1 and error_line(err)["error"] == "UnsupportedError"


def test_usage_errors(capsys):
    code, _, err = run([], capsys)
    assert code == 2 and error_line(err)["error"] == "UsageError"
    code, _, err = run(["dp", "--with-dp", "--config", "x.ini"], capsys)
    assert code == 2
    code, _, err = run(["solve"], capsys)
    assert code == 2


def test_console_script(tmp_path):
    cfg = write_config(tmp_path)
    r = subprocess.run([sys.executable, "-m", "perishable.cli", "preprocess", "--config",
                        cfg, "-q"], capture_output=True, text=True)
    assert r.returncode == 0 and "hit=0" in r.stdout
    r = subprocess.run([sys.executable, "-m", "perishable.cli", "dp", "--config",
                        str(tmp_path / "nope.ini")], capture_output=True, text=True)
    assert r.returncode == 2
    assert json.loads(r.stderr.strip().splitlines()[-1])["error"] == "ConfigError"


def test_lead_time_solve(tmp_path, capsys):
    text = CONFIG.format(theta=5, m=3, out=tmp_path / "out").replace(
        "m = 3", "m = 3\nlead = 1")
    for mode in ("full", "wastage"):
        cfg = tmp_path / f"{mode}.ini"
        cfg.write_text(text + f"\n[solver]\nlead_externality = {mode}\n"
                       "reuse_zero_lead_cbs = yes\n")
        code, out, _ = run(["compare", "--config", str(cfg), "-q"], capsys)
        assert code == 0
        vals = dict(ln.split("=", 1) for ln in out.splitlines())
        assert ("V_hs" in vals) == (mode == "full")
    inst = tmp_path / "out" / "poisson-m3-l1-h1-r5-th5"
    assert (inst / "policy_table.csv").exists()
    assert not (inst / "mc_mb_x0.csv").exists()
