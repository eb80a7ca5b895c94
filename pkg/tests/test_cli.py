import json
import math

import numpy as np
import pytest

from multimode_qed.cli import main


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def write_config(tmp_path, **kw):
    raw = {"omega_a": 19 * math.pi, "gamma": 1.44, "eta": 0.1} | kw
    p = tmp_path / f"cfg{len(list(tmp_path.iterdir()))}.json"
    p.write_text(json.dumps(raw))
    return str(p)


def test_spectrum_deterministic_and_gamma_free(tmp_path):
    c1, a = run(tmp_path, "a", "spectrum", "--preset", "multimode")
    c2, b = run(tmp_path, "b", "spectrum", "--preset", "multimode")
    c3, c = run(tmp_path, "c", "spectrum", "--preset", "weak")
    assert c1 == c2 == c3 == 0
    data = (a / "spectrum.csv").read_bytes()
    assert data == (b / "spectrum.csv").read_bytes() == (c / "spectrum.csv").read_bytes()
    assert data.startswith(b"omega,F\n")
    man = json.loads((a / "manifest.json").read_text())
    assert man["status"] == "ok" and man["outputs"] == [str(a / "spectrum.csv")]
    assert man["numerics"]["dt"] == 1e-3


def test_evolve_all_zero_coupling(tmp_path):
    code, out = run(tmp_path, "e", "evolve", "--config", write_config(tmp_path, gamma=0.0, t_end=1.0),
                    "--solver", "all")
    assert code == 0
    for s in ("laplace", "volterra", "systembath"):
        rows = np.genfromtxt(out / f"trace_{s}.csv", delimiter=",", names=True, dtype=None,
                             encoding=None)
        assert np.all(rows["abs2_c"] == 1) and set(rows["solver"]) == {s}
    assert (out / "bath.csv").read_text().startswith("t,abs2_c,norm\n")
    summary = json.loads((out / "crosscheck.json").read_text())
    assert summary["sup_norm"]["laplace_volterra"] == 0
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["outputs"]) == 5


def test_exit_codes(tmp_path):
    assert run(tmp_path, "x", "spectrum", "--config", str(tmp_path / "missing.json"))[0] == 2
    assert run(tmp_path, "y", "spectrum", "--config", write_config(tmp_path, gamma=-1))[0] == 2
    code, out = run(tmp_path, "z", "evolve", "--config", write_config(tmp_path, dt=0.01, t_end=1.0),
                    "--solver", "volterra")
    assert code == 3
    assert json.loads((out / "manifest.json").read_text())["status"].startswith("error")
    code, _ = run(tmp_path, "w", "evolve", "--config", write_config(tmp_path, gamma=3.0, t_end=1.0))
    assert code == 4


def test_critical_gamma(tmp_path, capsys):
    code, out = run(tmp_path, "g", "critical-gamma", "--preset", "multimode")
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["gamma_crit"] > 1.44
    assert man["gamma_crit"] == pytest.approx(math.pi * 19 * math.pi / man["integral_F_over_omega"])
    assert "gamma_crit" in capsys.readouterr().out


def test_resonances_and_lamb(tmp_path):
    code, out = run(tmp_path, "r", "resonances", "--preset", "strong")
    assert code == 0
    recs = json.loads((out / "resonances.json").read_text())
    near = [r for r in recs if abs(r["omega_r"] - 19 * math.pi) < math.pi]
    assert [r["kind"] for r in near] == ["resonant", "suppressed", "resonant"]
    code, out = run(tmp_path, "l", "lamb", "--preset", "strong")
    assert code == 0 and (out / "lamb.csv").read_text().startswith("omega,delta\n")


def test_analyze_and_empty_sweep(tmp_path):
    code, out = run(tmp_path, "an", "analyze", "--config",
                    write_config(tmp_path, gamma=2.5e-3, t_end=2.0))
    assert code == 0
    assert json.loads((out / "report.json").read_text())["regime"] == "strong_single_mode"
    code, out = run(tmp_path, "sw", "sweep", "--preset", "multimode", "--param", "gamma", "--values", "")
    assert code == 0
    assert (out / "sweep.csv").read_text().startswith("param_value,regime")
    assert run(tmp_path, "sx", "sweep", "--preset", "multimode", "--param", "L", "--values", "1")[0] == 2
