import json

import numpy as np
import pytest

from bragg_forge.cli import main
from bragg_forge.core import resonant_detuning, rubidium87
from bragg_forge.waveforms import PulseWaveform, deserialize, write_waveform

SPECIES = rubidium87()


def write_config(path, **fields):
    path.write_text(json.dumps(fields))
    return str(path)


def toy_optimize_config(tmp_path, **overrides):
    fields = dict(
        role="mirror", order=1, segments=20, dt_us=1.0,
        omega_max_khz=40.0, delta_max_khz=200.0, cutoff_khz=80.0,
        sigma_p=0.0, beta_min=0.0, beta_max=0.0,
        batch_size=4, iterations=40, seed=7, validation_size=4,
        validate_every=20,
    )
    fields.update(overrides)
    return write_config(tmp_path / "optimize.json", **fields)


def const_waveform_file(path, area, order=1, n=12, dt=1e-6):
    rabi = np.zeros(n)
    rabi[1:-1] = area / ((n - 2) * dt)
    wf = PulseWaveform(
        dt=dt, rabi=rabi, phase=np.zeros(n),
        detuning=np.full(n, resonant_detuning(order, 0.0, SPECIES)),
        order=order,
    )
    write_waveform(wf, path)
    return str(path)


def fringe_config(tmp_path, **overrides):
    bs = const_waveform_file(tmp_path / "bs.json", np.pi / 4)
    mirror = const_waveform_file(tmp_path / "mirror.json", np.pi / 2)
    fields = dict(
        scan="phase", order=1, beamsplitter=bs, mirror=mirror,
        interrogation_time_ms=1.0, sigma_beta=0.0, points=33, seed=3,
        source_sigma_hbark=0.0, quadrature_points=1,
        basis_m_min=0, basis_m_max=1,
    )
    fields.update(overrides)
    return write_config(tmp_path / "fringe.json", **fields)


class TestOptimizeCommand:
    def test_valid_config_round_trip(self, tmp_path):
        cfg = toy_optimize_config(tmp_path)
        out = tmp_path / "run"
        assert main(["optimize", "--config", cfg, "--out", str(out)]) == 0
        wf = deserialize((out / "mirror_waveform.json").read_text())
        assert wf.n_segments == 20
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "optimize"
        assert len(manifest["outputs"]) == 3

    def test_missing_omega_max(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "bad.json", role="mirror")
        assert main(["optimize", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "missing field: omega_max_khz" in capsys.readouterr().err

    def test_seed_reproducibility(self, tmp_path):
        cfg = toy_optimize_config(tmp_path)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["optimize", "--config", cfg, "--out", str(out1), "--seed", "7"]) == 0
        assert main(["optimize", "--config", cfg, "--out", str(out2), "--seed", "7"]) == 0
        assert (out1 / "mirror_waveform.json").read_bytes() == (
            out2 / "mirror_waveform.json"
        ).read_bytes()
        # the trace's timing column is wall clock; compare the data columns
        def data_columns(path):
            return [",".join(line.split(",")[:2]) for line in path.read_text().splitlines()]

        assert data_columns(out1 / "trace.csv") == data_columns(out2 / "trace.csv")

    def test_unreadable_config_is_io_failure(self, tmp_path):
        assert main(["optimize", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")]) == 4


class TestLandscapeCommand:
    def test_grid_output(self, tmp_path):
        wf_path = const_waveform_file(tmp_path / "wf.json", np.pi / 2)
        out = tmp_path / "land"
        code = main([
            "landscape", "--waveform", wf_path,
            "--grid", "delta_p=-0.2:0.2:3,beta=-0.1:0.1:3",
            "--out", str(out),
        ])
        assert code == 0
        lines = (out / "landscape.csv").read_text().strip().split("\n")
        assert len(lines) == 4  # header + 3 beta rows
        assert len(lines[1].split(",")) == 4  # beta + 3 detuning columns

    def test_center_cell_matches_single_evaluation(self, tmp_path):
        from bragg_forge.core import BlochBasis
        from bragg_forge.dynamics import pulse_propagator, state_transfer_fidelity
        from bragg_forge.waveforms import read_waveform

        wf_path = const_waveform_file(tmp_path / "wf.json", np.pi / 2)
        out = tmp_path / "land"
        main([
            "landscape", "--waveform", wf_path,
            "--grid", "delta_p=-0.2:0.2:3,beta=-0.1:0.1:3",
            "--out", str(out),
        ])
        lines = (out / "landscape.csv").read_text().strip().split("\n")
        center = float(lines[2].split(",")[2])
        wf = read_waveform(wf_path)
        basis = BlochBasis.for_order(1)
        unit = pulse_propagator(wf, 0.0, 0.0, basis, SPECIES)
        assert center == pytest.approx(state_transfer_fidelity(unit, 0, 1), abs=1e-12)

    def test_bad_grid_spec(self, tmp_path, capsys):
        wf_path = const_waveform_file(tmp_path / "wf.json", np.pi / 2)
        code = main([
            "landscape", "--waveform", wf_path, "--grid", "nonsense",
            "--out", str(tmp_path / "o"),
        ])
        assert code == 2


class TestFringeCommand:
    def test_phase_scan_outputs(self, tmp_path):
        cfg = fringe_config(tmp_path)
        out = tmp_path / "fr"
        assert main(["fringe", "--config", cfg, "--out", str(out)]) == 0
        csv_lines = (out / "phase_sigma_beta_0.csv").read_text().strip().split("\n")
        assert csv_lines[0] == "scan_value,asymmetry,shot_sigma"
        assert len(csv_lines) == 34
        fit = json.loads((out / "phase_sigma_beta_0.fit.json").read_text())
        assert fit["visibility"] == pytest.approx(1.0, abs=1e-6)

    def test_sigma_beta_sweep_files(self, tmp_path):
        cfg = fringe_config(
            tmp_path, sigma_beta=[0, 0.05, 0.1, 0.15, 0.2], points=9,
            quadrature_points=1,
        )
        out = tmp_path / "sweep"
        assert main(["fringe", "--config", cfg, "--out", str(out)]) == 0
        for sb in ("0", "0.05", "0.1", "0.15", "0.2"):
            assert (out / f"phase_sigma_beta_{sb}.csv").exists()

    def test_determinism_and_thread_independence(self, tmp_path):
        cfg = fringe_config(tmp_path, sigma_beta=0.1, points=9, shots=2)
        outs = []
        for name, threads in (("a", "1"), ("b", "1"), ("c", "3")):
            out = tmp_path / name
            assert main(["fringe", "--config", cfg, "--out", str(out),
                         "--threads", threads]) == 0
            outs.append((out / "phase_sigma_beta_0.1.csv").read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_chirp_scan_outputs(self, tmp_path):
        cfg = fringe_config(
            tmp_path, scan="chirp", interrogation_time_ms=[1.0, 1.5],
            gravity_m_s2=9.79674, chirp_points=61, chirp_span_periods=1.6,
        )
        out = tmp_path / "chirp"
        assert main(["fringe", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "chirp_T_1ms.csv").exists()
        assert (out / "chirp_T_1.5ms.csv").exists()
        report = json.loads((out / "central_fringe.json").read_text())
        assert report["gravity"] == pytest.approx(9.79674, abs=5e-5)

    def test_acceleration_scan_outputs(self, tmp_path):
        cfg = fringe_config(
            tmp_path, scan="acceleration", interrogation_time_ms=1.0,
            acceleration_ug={"min": -100, "max": 100, "count": 5}, points=17,
        )
        out = tmp_path / "acc"
        assert main(["fringe", "--config", cfg, "--out", str(out)]) == 0
        table = (out / "phase_vs_acceleration.csv").read_text().strip().split("\n")
        assert len(table) == 6
        report = json.loads((out / "scale_factor.json").read_text())
        assert abs(report["relative_deviation"]) < 0.02

    def test_unknown_scan(self, tmp_path):
        cfg = fringe_config(tmp_path, scan="wobble")
        assert main(["fringe", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


class TestFitCommand:
    def test_fit_round_trip(self, tmp_path):
        x = np.linspace(0, 2 * np.pi, 33, endpoint=False)
        y = 0.8 * np.cos(3 * x - 0.4)
        csv = tmp_path / "data.csv"
        with open(csv, "w") as fh:
            fh.write("scan_value,asymmetry,shot_sigma\n")
            for xi, yi in zip(x, y):
                fh.write(f"{float(xi)!r},{float(yi)!r},0.0\n")
        out = tmp_path / "fit"
        assert main(["fit", "--fringe", str(csv), "--frequency", "3.0",
                     "--out", str(out)]) == 0
        report = json.loads((out / "data.fit.json").read_text())
        assert report["amplitude"] == pytest.approx(0.8, abs=1e-9)
        assert report["interferometer_phase"] == pytest.approx(0.4, abs=1e-9)


class TestValidateCommand:
    def test_good_waveform_passes(self, tmp_path, capsys):
        path = const_waveform_file(tmp_path / "wf.json", np.pi / 2)
        assert main(["validate", "--waveform", path]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["problems"] == []
        assert report["truncation_leakage"] < 1e-4

    def test_malformed_waveform(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        assert main(["validate", "--waveform", str(bad)]) == 2
