import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from dwcat.analysis import WignerGrid
from dwcat.cli import (
    ConfigError,
    load_config,
    main,
    parse_temperature,
    parse_time,
    parse_transitions,
    protocol_from,
)
from dwcat.device import reference_units
from dwcat.dynamics import Trajectory
from dwcat.readout import SpectrumResult

UNIT = reference_units()
FAST = ["--override", "protocol.dt2=0.1us", "--override", "wigner.resolution=61"]


def test_time_parsing():
    assert parse_time("110/w", UNIT, "f") == 110.0
    assert parse_time(12.5, UNIT, "f") == 12.5
    # 0.1 us at omega = 2 pi 2 MHz
    assert parse_time("0.1us", UNIT, "f") == pytest.approx(1.2566370614359172)
    with pytest.raises(ConfigError, match="field 'f'"):
        parse_time("ten seconds", UNIT, "f")


def test_temperature_parsing():
    assert parse_temperature("15mK", "t") == pytest.approx(0.015)
    assert parse_temperature("0.03 K", "t") == pytest.approx(0.03)
    assert parse_temperature(0, "t") == 0.0
    with pytest.raises(ConfigError):
        parse_temperature("hot", "t")


def test_transition_parsing():
    assert parse_transitions(4).pairs == ((0, 2), (0, 4), (2, 4))
    assert parse_transitions([[0, 2]]).pairs == ((0, 2),)
    assert not parse_transitions(0)
    with pytest.raises(ConfigError):
        parse_transitions([[1, 2]])


def test_defaults_are_headline_experiment():
    cfg = protocol_from(load_config(None))
    assert (cfg.zeta_c, cfg.zeta_f, cfg.dt1, cfg.dt2) == (-2.5e-4, 3e-4, 1.0, 110.0)
    assert cfg.stage3_ramp == "sine" and cfg.transitions.pairs == ((0, 2), (0, 4), (2, 4))
    assert cfg.temperature == pytest.approx(0.015) and cfg.quality_factor == 1e6 and cfg.policy.dim == 50


def test_config_errors_name_the_field(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("protocol:\n  dt2: [1,\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(str(bad))
    (tmp_path / "unknown.yaml").write_text("protocol:\n  speed: 3\n")
    with pytest.raises(ConfigError, match="protocol.speed"):
        load_config(str(tmp_path / "unknown.yaml"))
    with pytest.raises(ConfigError):
        load_config(None, ["basis.dim"])
    with pytest.raises(ConfigError, match="stage3_ramp"):
        protocol_from(load_config(None, ["protocol.stage3_ramp=cubic"]))
    with pytest.raises(ConfigError):
        protocol_from(load_config(None, ["protocol.zeta_c=0.1"]))


def test_override_parses_yaml_values():
    cfg = load_config(None, ["bath.quality_factor=2e5", "protocol.transitions=[[0,2]]", "basis.dim=40"])
    assert cfg["bath"]["quality_factor"] == 2e5 and cfg["basis"]["dim"] == 40
    assert cfg["protocol"]["transitions"] == [[0, 2]]


def test_exit_code_config_error(tmp_path, capsys):
    assert main(["protocol", "--out", str(tmp_path), "--override", "protocol.nope=1"]) == 2
    assert "protocol.nope" in capsys.readouterr().err
    assert main(["spectrum", "--out", str(tmp_path / "s")]) == 2
    assert main(["spectrum", "--out", str(tmp_path / "s"), "--override", "spectrum.state=/missing.npz"]) == 2


def test_exit_code_numerical_abort(tmp_path):
    out = tmp_path / "abort"
    assert main(["protocol", "--out", str(out), "--override", "protocol.xi=0.01", *FAST]) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"].startswith("numerical abort")
    assert manifest["derived"]["abort"]["min_eigenvalue"] < -1e-4


@pytest.fixture(scope="module")
def protocol_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("protocol")
    assert main(["protocol", "--out", str(out), *FAST]) == 0
    return out


def test_protocol_outputs(protocol_run):
    out = protocol_run
    manifest = json.loads((out / "manifest.json").read_text())
    for name in manifest["outputs"]:
        assert (out / name).exists(), name
    result = json.loads((out / "result.json").read_text())
    rows = Trajectory.load_rows(out / "trajectory.csv")
    assert rows[-1]["fidelity"] == result["final_fidelity"]
    assert Trajectory.load_rows(out / "trajectory.json") == rows
    a = WignerGrid.from_csv(out / "wigner.csv")
    b = WignerGrid.from_binary(out / "wigner.bin")
    assert np.array_equal(a.values, b.values)
    assert manifest["config"]["protocol"]["dt2"] == "0.1us"
    assert manifest["derived"]["protocol"]["dt2"] == pytest.approx(1.2566370614359172)


def test_manifest_rerun_is_identical(protocol_run, tmp_path):
    assert main(["protocol", "--config", str(protocol_run / "manifest.json"), "--out", str(tmp_path)]) == 0
    first = json.loads((protocol_run / "result.json").read_text())
    second = json.loads((tmp_path / "result.json").read_text())
    assert first == second
    assert (protocol_run / "trajectory.csv").read_text() == (tmp_path / "trajectory.csv").read_text()


def test_spectrum_and_wigner_from_saved_state(protocol_run, tmp_path):
    state = str(protocol_run / "final_state.npz")
    out = tmp_path / "spec"
    assert main(["spectrum", "--out", str(out), "--override", f"spectrum.state={state}",
                 "--override", "spectrum.hold_times=[0, 0.5/w]"]) == 0
    ax, S = SpectrumResult.load_csv(out / "spectrum_01.csv")
    assert len(ax) == 4001 and np.all(S >= 0)
    lines = SpectrumResult.load_lines(out / "lines_00.json")
    assert lines and all(l.m != l.n for l in lines)
    w = tmp_path / "w"
    assert main(["wigner", "--out", str(w), "--override", f"wigner.state={state}",
                 "--override", "wigner.resolution=41"]) == 0
    g = WignerGrid.from_binary(w / "wigner.bin")
    assert g.values.shape == (41, 41)


def _sweep_rows(path):
    with open(path) as fh:
        return [{k: v for k, v in r.items() if k != "runtime_s"} for r in csv.DictReader(fh)]


def test_sweep_is_worker_independent(tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(
        "protocol:\n  dt2: 0.1us\n"
        "sweep:\n  axes:\n    transitions: [0, 2, 4]\n    temperature: [0, 15mK]\n"
    )
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "one")]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "two"), "--workers", "2"]) == 0
    one, two = _sweep_rows(tmp_path / "one/sweep.csv"), _sweep_rows(tmp_path / "two/sweep.csv")
    assert one == two and len(one) == 6
    assert [int(r["index"]) for r in one] == list(range(6))
    assert (tmp_path / "one/point_0005/result.json").exists()


def test_sweep_limits(tmp_path):
    base = ["sweep", "--out", str(tmp_path)]
    assert main([*base, "--override", "sweep.axes={}"]) == 2
    assert main([*base, "--override", "sweep.axes={speed: [1]}"]) == 2
    assert main([*base, "--override", "sweep.axes={dt2: [1, 2, 3]}", "--override", "sweep.max_points=2"]) == 2


def test_sweep_records_point_failures(tmp_path):
    args = ["sweep", "--out", str(tmp_path), "--override", "sweep.axes={xi: [0.0, 0.01]}", *FAST[:2]]
    assert main(args) == 0
    rows = _sweep_rows(tmp_path / "sweep.csv")
    assert rows[0]["status"] == "ok"
    assert rows[1]["status"].startswith("InvariantViolation") and math.isnan(float(rows[1]["final_fidelity"]))


def test_eigen_and_design(tmp_path):
    assert main(["eigen", "--out", str(tmp_path / "e"), "--override", "eigen.points=3"]) == 0
    cal = json.loads((tmp_path / "e/calibration.json").read_text())
    assert all(v["max_error"] < 1e-6 for v in cal.values())
    with open(tmp_path / "e/parities.csv") as fh:
        row = next(csv.DictReader(fh))
    assert row["P0"] == "even" and row["P1"] == "odd"
    assert main(["design", "--out", str(tmp_path / "d")]) == 0
    rep = json.loads((tmp_path / "d/design.json").read_text())
    assert rep["beta_J_per_m4"] == pytest.approx(3.3e13, rel=0.02)
    with open(tmp_path / "d/alpha_table.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 200


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "dwcat", "design", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "beta_J_per_m4" in res.stdout
