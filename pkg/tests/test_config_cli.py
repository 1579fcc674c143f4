"""Configuration parsing, serialization round-trips, CLI scenarios."""

import json
import math
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srclock.cli import main, run_scenario
from srclock.config import (ConfigError, config_from_tree, load_config,
                            parse_flat_config)
from srclock.reporting import file_sha256, read_csv, write_csv

TWO_PI = 2.0 * math.pi

FLAT_EXAMPLE = """
# comment line
scenario = pulse-scan
out_dir = results/demo
params.n_atoms = 20000
params.cavity_loss = 2.26e6     # Hz, scaled by the flag below
params.apply_two_pi = true
run.dt = 2e-9
run.seed = 77
run.n_traj = 5
sweep.field = n_atoms
sweep.values = 10000, 20000
"""


class TestConfigParsing:
    def test_flat_text(self):
        tree = parse_flat_config(FLAT_EXAMPLE)
        assert tree["scenario"] == "pulse-scan"
        assert tree["params"]["n_atoms"] == 20000
        assert tree["params"]["apply_two_pi"] is True
        assert tree["sweep"]["values"] == [10000, 20000]

    def test_flat_and_json_equivalent(self, tmp_path):
        flat = tmp_path / "cfg.txt"
        flat.write_text(FLAT_EXAMPLE)
        tree = parse_flat_config(FLAT_EXAMPLE)
        as_json = tmp_path / "cfg.json"
        as_json.write_text(json.dumps(tree))
        a = load_config(flat)
        b = load_config(as_json)
        assert a.params == b.params
        assert a.sweep_values == b.sweep_values
        assert a.seed == b.seed == 77

    def test_two_pi_flag_applied(self):
        cfg = config_from_tree(parse_flat_config(FLAT_EXAMPLE))
        assert cfg.params.cavity_loss == pytest.approx(TWO_PI * 2.26e6)

    def test_two_pi_flag_off(self):
        text = FLAT_EXAMPLE.replace("apply_two_pi = true",
                                    "apply_two_pi = false")
        cfg = config_from_tree(parse_flat_config(text))
        assert cfg.params.cavity_loss == pytest.approx(2.26e6)

    def test_unknown_param_rejected(self):
        with pytest.raises(ConfigError, match="unknown params field"):
            config_from_tree({"scenario": "pulse-scan",
                              "params": {"frobnication": 3}})

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ConfigError, match="unknown scenario"):
            config_from_tree({"scenario": "teleport"})

    def test_sweep_field_validated(self):
        with pytest.raises(ConfigError, match="not a system parameter"):
            config_from_tree({"scenario": "pulse-scan",
                              "sweep": {"field": "bogus", "values": [1]}})

    def test_sweep_needs_values(self):
        with pytest.raises(ConfigError, match="non-empty"):
            config_from_tree({"scenario": "pulse-scan",
                              "sweep": {"field": "n_atoms"}})

    def test_sweep_is_single_field(self):
        with pytest.raises(ConfigError, match="unknown sweep keys"):
            config_from_tree({"scenario": "pulse-scan",
                              "sweep": {"field": "n_atoms", "values": [1],
                                        "second_field": "pump_rate"}})

    def test_bad_line_reports_position(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_flat_config("not a key value pair")

    def test_invariant_overrides_typechecked(self):
        with pytest.raises(ValueError, match="detection_efficiency"):
            config_from_tree({"scenario": "pulse-scan",
                              "params": {"detection_efficiency": 1.5}})


class TestCsvRoundTrip:
    def test_known_values(self, tmp_path):
        cols = {"t": np.array([0.0, 1e-9, 2e-9]),
                "x": np.array([1.0 / 3.0, math.pi, -2.2250738585072014e-308])}
        path = write_csv(tmp_path / "a.csv", cols)
        back = read_csv(path)
        assert np.array_equal(back["t"], cols["t"])
        assert np.array_equal(back["x"], cols["x"])

    @settings(max_examples=30, deadline=None)
    @given(vals=st.lists(st.floats(allow_nan=False, allow_infinity=False,
                                   width=64), min_size=1, max_size=40))
    def test_bit_exact_for_arbitrary_floats(self, vals, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("csv")
        arr = np.array(vals, dtype=float)
        back = read_csv(write_csv(tmp / "x.csv", {"v": arr}))
        assert np.array_equal(back["v"], arr)

    def test_length_mismatch_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_csv(tmp_path / "b.csv", {"a": np.zeros(3), "b": np.zeros(4)})


@pytest.fixture(scope="module")
def pulse_scan_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pulse")
    rc = main(["pulse-scan", "--out-dir", str(out), "--seed", "4",
               "--sweep", "n_atoms=10000,50000"])
    assert rc == 0
    return out


class TestScenarioOutputs:
    def test_files_and_manifest(self, pulse_scan_dir):
        names = {p.name for p in pulse_scan_dir.iterdir()}
        assert {"pulse_N10000.csv", "pulse_N50000.csv", "summary.json",
                "manifest.json"} <= names
        manifest = json.loads((pulse_scan_dir / "manifest.json").read_text())
        assert manifest["seed"] == 4
        assert manifest["code_version"]
        for name, digest in manifest["files"].items():
            assert file_sha256(pulse_scan_dir / name) == digest
        assert set(manifest["files"]) == names - {"manifest.json"}

    def test_csv_round_trips(self, pulse_scan_dir):
        data = read_csv(pulse_scan_dir / "pulse_N50000.csv")
        path2 = pulse_scan_dir / "rewrite.csv"
        write_csv(path2, data)
        again = read_csv(path2)
        for key in data:
            assert np.array_equal(data[key], again[key])
        path2.unlink()

    def test_summary_records_trends(self, pulse_scan_dir):
        summary = json.loads((pulse_scan_dir / "summary.json").read_text())
        pulses = summary["pulses"]
        assert pulses[0]["n_atoms"] == 10000
        assert pulses[1]["peak_height"] > pulses[0]["peak_height"]
        assert pulses[1]["peak_time"] < pulses[0]["peak_time"]


class TestCliErrors:
    def test_unparseable_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("no equals sign here")
        assert main(["pulse-scan", "--config", str(bad)]) == 2

    def test_missing_config_file_exits_2(self):
        assert main(["pulse-scan", "--config", "/nonexistent/x.cfg"]) == 2

    def test_bad_sweep_flag_exits_2(self, tmp_path):
        assert main(["pulse-scan", "--out-dir", str(tmp_path),
                     "--sweep", "bogus=1,2"]) == 2

    def test_runtime_failure_exits_3_with_report(self, tmp_path, capsys):
        # metrology demands detection; a zero-efficiency config must fail
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("params.detection_efficiency = 0\n"
                       "metrology.n_cycles = 4\n")
        rc = main(["metrology", "--config", str(cfg),
                   "--out-dir", str(tmp_path / "out")])
        assert rc == 3
        report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "detection" in report["message"]


def test_heterodyne_with_single_noiseless_trajectory_reduces_to_pulse_run(
        tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("params.detection_efficiency = 0\n"
                   "params.n_atoms = 30000\n"
                   "run.n_traj = 1\n"
                   "run.t_end = 6e-5\n")
    out_h = tmp_path / "h"
    out_p = tmp_path / "p"
    assert main(["heterodyne", "--config", str(cfg), "--out-dir", str(out_h),
                 "--seed", "2"]) == 0
    assert main(["pulse-scan", "--config", str(cfg), "--out-dir", str(out_p),
                 "--seed", "2", "--sweep", "n_atoms=30000"]) == 0
    h = read_csv(out_h / "ensemble_mean.csv")
    p = read_csv(out_p / "pulse_N30000.csv")
    assert np.array_equal(h["photon_mean"], p["photon_number"])
    assert np.all(h["photon_se"] == 0.0)


def test_end_to_end_fit_recovery_through_pipeline_units():
    # the spectrum -> fit stage recovers an injected line to 1e-6
    from srclock.metrology import PowerSpectrum, lorentzian, lorentzian_fit
    freqs = np.arange(0.0, 3e6, 1e3)
    spec = PowerSpectrum(freqs=freqs,
                         power=lorentzian(freqs, 1.1e6, 9e3, 4.0, 0.3),
                         span=1e-3, dt=1e-9)
    fit = lorentzian_fit(spec)
    assert fit.converged
    for got, want in ((fit.beat_freq / TWO_PI, 1.1e6),
                      (fit.hwhm / TWO_PI, 9e3),
                      (fit.amplitude, 4.0), (fit.offset, 0.3)):
        assert got == pytest.approx(want, rel=1e-6)
