import json
import os

import numpy as np
import pytest

from lcns.cli import main
from lcns.config import parse_config
from lcns.forward import solve_linearized
from lcns.io import read_csv
from lcns.snapshot import read_sequence
from lcns.verification import check_energy_certificates

SCENARIOS = os.path.join(os.path.dirname(__file__), os.pardir, "src", "lcns", "scenarios")


def scenario(name):
    return os.path.join(SCENARIOS, name + ".ini")


def run(*argv):
    return main(list(argv))


def test_forward_rest_is_zero(tmp_path):
    assert run("forward", "--config", scenario("rest_1d"), "--out", str(tmp_path)) == 0
    _, frames, _ = read_sequence(tmp_path / "state_rho.lcns")
    assert np.abs(np.asarray(frames)).max() == 0
    header, rows = read_csv(tmp_path / "energy.csv")
    assert header[0] == "t" and len(rows) == 33
    assert all(float(v) == 0.0 for r in rows for v in r[1:2])


def test_manufacture_writes_coefficients(tmp_path):
    assert run("manufacture", "--config", scenario("stratified_1d"), "--out", str(tmp_path)) == 0
    for name in ("base_rho.lcns", "base_u.lcns", "base_f.lcns", "base_coefficients.csv",
                 "manifest_manufacture.json"):
        assert (tmp_path / name).exists()


def test_verify_all_passes_on_tracking(tmp_path):
    assert run("verify", "--config", scenario("tracking_1d"), "--out", str(tmp_path)) == 0
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert len(report["reports"]) == 10
    assert all(r["status"] == "PASS" for r in report["reports"])
    assert "FAIL" not in (tmp_path / "verify_summary.txt").read_text()


def test_rerun_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    outs = []
    for k, threads in enumerate(("1", "4")):
        out = tmp_path / str(k)
        assert run("verify", "gradient", "--config", scenario("decay_1d"), "--out", str(out),
                   "--threads", threads) == 0
        outs.append(out)
    for name in ("manifest_verify.json", "verify_report.json", "verify_summary.txt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_optimize_then_report(tmp_path):
    out = str(tmp_path)
    assert run("optimize", "--config", scenario("binding_1d"), "--out", out) == 0
    _, rows = read_csv(tmp_path / "iterates.csv")
    assert rows
    assert run("report", "--config", scenario("binding_1d"), "--out", out) == 0
    assert "optimize" in (tmp_path / "report.txt").read_text()


def test_adjoint_needs_saved_state(tmp_path, capsys):
    assert run("adjoint", "--config", scenario("decay_1d"), "--out", str(tmp_path)) == 2
    assert "MissingFile" in capsys.readouterr().err
    assert run("forward", "--config", scenario("decay_1d"), "--out", str(tmp_path)) == 0
    assert run("adjoint", "--config", scenario("decay_1d"), "--out", str(tmp_path),
               "--mode", "transpose") == 0
    assert (tmp_path / "adjoint_sigma.lcns").exists()


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[grid]\ncells = 64\n[time]\nT = 1\nsteps = 4\n")
    assert run("forward", "--config", str(cfg), "--out", str(tmp_path)) == 2
    assert "CFL" in capsys.readouterr().err


@pytest.mark.parametrize("name", sorted(n[:-4] for n in os.listdir(SCENARIOS)))
def test_gronwall_bound_on_shipped_scenarios(name):
    cfg = parse_config(scenario(name))
    base = cfg.base()
    g = base.grid
    rho0, u0 = cfg.initial(g)
    ctrl = cfg.control(g, base.times)
    traj = solve_linearized(base, ctrl.values, rho0, u0, monitor=True)
    res = check_energy_certificates(traj, base)
    assert res.passed, res.summary()
