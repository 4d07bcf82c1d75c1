import hashlib
from pathlib import Path

import numpy as np
import pytest

from twomembrane.cli import main

from conftest import CONFIG_PATH


def run_cli(*args) -> int:
    return main([str(a) for a in args])


def read_csv(path: Path):
    rows = path.read_text().strip().splitlines()
    header = rows[0].split(",")
    data = [r.split(",") for r in rows[1:]]
    return header, data


def test_derived_command(tmp_path, capsys):
    code = run_cli("derived", "--config", CONFIG_PATH, "--out", tmp_path)
    assert code == 0
    out = capsys.readouterr().out
    assert "kappa_hz = 67050" in out
    assert (tmp_path / "derived.csv").exists()
    header, data = read_csv(tmp_path / "derived.csv")
    assert header == ["key", "value", "unit"]
    values = {row[0]: float(row[1]) for row in data}
    assert values["q_thermal_1"] == pytest.approx(3.365e-12, rel=1e-6)


def test_limit_cycle_command(tmp_path, capsys):
    code = run_cli("limit-cycle", "--config", CONFIG_PATH, "--out", tmp_path)
    assert code == 0
    out = capsys.readouterr().out
    xi = float([ln for ln in out.splitlines() if ln.startswith("xi_st")][0]
               .split("=")[1])
    assert xi == pytest.approx(1.1074, abs=2e-3)
    header, data = read_csv(tmp_path / "limit_cycle_roots.csv")
    assert header == ["xi_root", "stable"]
    assert len(data) >= 1 and data[0][1] == "1"


def test_limit_cycle_power_scan(tmp_path):
    code = run_cli("limit-cycle", "--config", CONFIG_PATH, "--out", tmp_path,
                   "--power", "1e-6:1e-6:6e-6")
    assert code == 0
    header, data = read_csv(tmp_path / "power_scan.csv")
    assert header[0] == "power_w"
    n_roots = [int(r[1]) for r in data]
    assert n_roots[0] == 0       # below threshold
    assert n_roots[-1] >= 1      # above threshold


def test_response_sweep_command(tmp_path):
    code = run_cli("response-sweep", "--config", CONFIG_PATH, "--out", tmp_path,
                   "--xi", "0:0.05:1.1")
    assert code == 0
    header, data = read_csv(tmp_path / "ratio_sweep.csv")
    assert header == ["xi", "t1", "t2", "tsb", "n1", "n2"]
    by_xi = {float(r[0]): r for r in data}
    assert float(by_xi[1.05][4]) == pytest.approx(0.70, abs=0.02)
    assert float(by_xi[1.05][5]) == pytest.approx(0.42, abs=0.02)
    header, data = read_csv(tmp_path / "tone_sweep.csv")
    assert len(data) == 6 * len(by_xi)


def test_simulate_deterministic(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        code = run_cli("simulate", "--config", CONFIG_PATH, "--out", out,
                       "--seed", "7", "--duration", "0.002", "--dt", "1e-7",
                       "--schedule", "off:0.001,4.25uW:0.001")
        assert code == 0
    ha = hashlib.sha256((out_a / "trajectory.tmc").read_bytes()).hexdigest()
    hb = hashlib.sha256((out_b / "trajectory.tmc").read_bytes()).hexdigest()
    assert ha == hb
    assert (out_a / "voltage_head.csv").exists()
    from twomembrane.datafiles import read_columnar
    header, cols = read_columnar(out_a / "voltage.tmc")
    assert header["kind"] == "voltage"
    assert cols["v_h"].size == cols["t"].size > 0


def test_slowflow_and_sync_commands(tmp_path):
    code = run_cli("slowflow", "--config", CONFIG_PATH, "--out", tmp_path,
                   "--seed", "3", "--duration", "2.0", "--sync-window", "0.2")
    assert code == 0
    assert (tmp_path / "slow_trajectory.tmc").exists()
    assert (tmp_path / "sync_measure.csv").exists()
    code = run_cli("sync", "--input", tmp_path / "slow_trajectory.tmc",
                   "--out", tmp_path / "sync2", "--sync-window", "0.2")
    assert code == 0
    data = np.loadtxt(tmp_path / "sync2" / "sync_measure.csv", delimiter=",",
                      skiprows=1)
    assert np.all(np.abs(data[:, 1]) <= 1.0)


def test_spectra_command(tmp_path):
    code = run_cli("simulate", "--config", CONFIG_PATH, "--out", tmp_path,
                   "--seed", "1", "--duration", "0.05", "--dt", "1.5e-7",
                   "--decimation", "14")
    assert code == 0
    code = run_cli("spectra", "--config", CONFIG_PATH, "--out", tmp_path,
                   "--input", tmp_path / "trajectory.tmc",
                   "--segment", "16384",
                   "--band", "230000:232000", "--band", "100:1000")
    assert code == 0
    header, data = read_csv(tmp_path / "band_variance.csv")
    assert header == ["t", "var_230000_232000", "var_100_1000"]
    # thermal peak of mode 1 dominates an off-tone band
    v_peak = np.array([float(r[1]) for r in data])
    v_floor = np.array([float(r[2]) for r in data])
    assert v_peak.mean() > 10 * v_floor.mean()


def test_calibrate_command(tmp_path, params, capsys):
    from twomembrane import ToneId, homodyne_asn, reflection_set
    rs = reflection_set(1.054, 5.0, params)
    lines = ["tone,amplitude_v"]
    for tone in (ToneId.OMEGA_1, ToneId.OMEGA_2, ToneId.OMEGA_SM,
                 ToneId.OMEGA_B):
        lines.append(f"{tone.value},{2.0 * 0.05 * homodyne_asn(rs.pair(tone))}")
    tones_csv = tmp_path / "tones.csv"
    tones_csv.write_text("\n".join(lines) + "\n")
    code = run_cli("calibrate", "--config", CONFIG_PATH, "--out", tmp_path,
                   "--tones", tones_csv)
    assert code == 0
    out = capsys.readouterr().out
    xi = float([ln for ln in out.splitlines() if ln.startswith("xi")][0]
               .split("=")[1])
    assert xi == pytest.approx(1.054, abs=1e-3)
    assert (tmp_path / "calibration.csv").exists()


def test_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("omega_1_hz = -5\n")
    assert run_cli("derived", "--config", bad, "--out", tmp_path) == 1


def test_missing_file_exit_code(tmp_path):
    assert run_cli("derived", "--config", tmp_path / "nope.cfg",
                   "--out", tmp_path) == 3


def test_numerical_failure_exit_code(tmp_path):
    # truncation far below the guard for the requested sweep
    code = run_cli("response-sweep", "--config", CONFIG_PATH,
                   "--out", tmp_path, "--xi", "0:1:8", "--truncation", "5")
    assert code == 2


def test_config_never_mutated(tmp_path):
    before = CONFIG_PATH.read_bytes()
    run_cli("derived", "--config", CONFIG_PATH, "--out", tmp_path)
    run_cli("limit-cycle", "--config", CONFIG_PATH, "--out", tmp_path)
    assert CONFIG_PATH.read_bytes() == before
