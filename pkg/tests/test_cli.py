import csv
import json

import numpy as np
import pytest

from measure_heat.cli import main


def write_cfg(tmp_path, **over):
    d = {
        "mesh": {"dim": 1, "extents": [1.0], "n_cells": [4]},
        "coefficient": {"kind": "constant_scalar", "values": 1.0},
        "measure": {"atoms": [{"x": 0.5, "weight": 1.0}]},
        "time": {"dt": 0.1, "t_end": 1.0},
        "output": {"dir": str(tmp_path / "out")},
    }
    d.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    return str(path)


def read_values(path):
    with open(path) as fh:
        return np.array([float(r["value"]) for r in csv.DictReader(fh)])


def test_elliptic(tmp_path):
    assert main(["elliptic", "--config", write_cfg(tmp_path)]) == 0
    out = tmp_path / "out"
    np.testing.assert_allclose(read_values(out / "v.csv"), [0.125, 0.25, 0.125], rtol=1e-15)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["l1"] == pytest.approx(0.125)
    assert (out / "v.csv").read_text().splitlines()[0] == "node_index,x,value"


def test_elliptic_zero_measure(tmp_path):
    assert main(["elliptic", "--config", write_cfg(tmp_path, measure={})]) == 0
    assert np.all(read_values(tmp_path / "out" / "v.csv") == 0)


def test_parabolic_zero(tmp_path):
    assert main(["parabolic", "--config", write_cfg(tmp_path, measure={})]) == 0
    out = tmp_path / "out"
    assert np.all(read_values(out / "trajectory.csv") == 0)
    with open(out / "diagnostics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 11
    assert all(float(r["l1"]) == 0 for r in rows)


def test_parabolic_sine_decay(tmp_path):
    cfgp = write_cfg(tmp_path, measure={}, u0={"preset": "sine"}, time={"dt": 0.01, "t_end": 0.05})
    assert main(["parabolic", "--config", cfgp]) == 0
    with open(tmp_path / "out" / "diagnostics.csv") as fh:
        l1 = np.array([float(r["l1"]) for r in csv.DictReader(fh)])
    lam = 32 * (1 - np.cos(np.pi / 4))
    np.testing.assert_allclose(l1[1:] / l1[:-1], 1 / (1 + lam * 0.01), rtol=1e-12)


def test_retrograde_zero(tmp_path):
    assert main(["retrograde", "--config", write_cfg(tmp_path)]) == 0
    assert np.all(read_values(tmp_path / "out" / "trajectory.csv") == 0)


def test_duality_check_zero_source(tmp_path, capsys):
    assert main(["duality-check", "--config", write_cfg(tmp_path)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["residual"] == 0


def test_duality_check_random(tmp_path):
    cfgp = write_cfg(tmp_path, u0={"preset": "random"}, g={"preset": "random"})
    assert main(["duality-check", "--config", cfgp, "--seed", "42"]) == 0
    report = json.loads((tmp_path / "out" / "duality.json").read_text())
    assert report["relative_residual"] <= 1e-10
    assert main(["duality-check", "--config", cfgp, "--seed", "42", "--break-adjoint"]) == 4


def test_boundary_atom_exit_2(tmp_path, capsys):
    assert main(["elliptic", "--config", write_cfg(tmp_path, measure={"atoms": [{"x": 0.0}]})]) == 2
    assert "strictly inside" in capsys.readouterr().err


def test_unknown_key_exit_2(tmp_path):
    assert main(["elliptic", "--config", write_cfg(tmp_path, extra=1)]) == 2


def test_missing_config_exit_2():
    assert main(["elliptic"]) == 2


def test_asymptotic(tmp_path):
    cfgp = write_cfg(tmp_path, mesh={"dim": 1, "extents": [1.0], "n_cells": [64]},
                     time={"dt": 0.0078125, "tol": 1e-8})
    assert main(["asymptotic", "--config", cfgp]) == 0
    out = tmp_path / "out"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["stop_reason"] == "tolerance_reached"
    assert abs(summary["fitted_rate"] / summary["predicted_rate"] - 1) <= 0.05
    assert json.loads((out / "bracket.json").read_text())["bracket_held"]
    assert (out / "decay.csv").read_text().startswith("t,l1_dist,linf_dist\n")


def test_asymptotic_from_steady_state(tmp_path):
    cfgp = write_cfg(tmp_path, u0={"preset": "green_scaled", "lambda": 1.0}, time={"dt": 0.01, "tol": 1e-8})
    assert main(["asymptotic", "--config", cfgp]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["t_final"] == pytest.approx(0.01)


def test_asymptotic_horizon_exit_5(tmp_path):
    cfgp = write_cfg(tmp_path, time={"dt": 0.01, "tol": 1e-8, "t_max": 0.05})
    assert main(["asymptotic", "--config", cfgp]) == 5


def test_verify_quick(tmp_path, capsys):
    assert main(["verify", "--tier", "quick", "--seed", "0", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "verify.txt").read_text().strip() == capsys.readouterr().out.strip()


def test_verify_break_adjoint(capsys):
    assert main(["verify", "--tier", "quick", "--seed", "0", "--break-adjoint"]) == 1
    assert "duality" in capsys.readouterr().err


def test_outputs_deterministic(tmp_path):
    cfgp = write_cfg(tmp_path, u0={"preset": "random"}, time={"dt": 0.05, "t_end": 0.5})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["parabolic", "--config", cfgp, "--out", str(a)]) == 0
    assert main(["parabolic", "--config", cfgp, "--out", str(b)]) == 0
    for name in ("trajectory.csv", "diagnostics.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_verify_full_tier(capsys):
    assert main(["verify", "--tier", "full", "--seed", "0"]) == 0
    assert "FAIL" not in capsys.readouterr().out
