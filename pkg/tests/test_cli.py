import json

import numpy as np
import pytest

from socest.cli import main
from socest.ecm import CellState, Profile, simulate_arrays
from socest.fitting import make_incremental_current_profile, predict_voltage
from socest.io import RunManifest, read_ocv_table, read_params, write_params, write_profile


@pytest.fixture(scope="module")
def params_file(tmp_path_factory, cell):
    path = tmp_path_factory.mktemp("cfg") / "cell.yaml"
    write_params(cell, path)
    return str(path)


@pytest.fixture(scope="module")
def measured_file(tmp_path_factory, cell):
    """Simulated drive with voltage: the input for `estimate`."""
    rng = np.random.default_rng(17)
    profile = Profile.uniform(rng.uniform(-4.0, 4.0, 400))
    _, _, _, v, _ = simulate_arrays(cell, CellState(z=0.8), profile)
    withv = profile.with_signals(v=v + rng.normal(0, 0.003, 400))
    path = tmp_path_factory.mktemp("data") / "drive.csv"
    write_profile(withv, path)
    return str(path)


def read_lines(path):
    with open(path) as fh:
        return fh.read().splitlines()


class TestSimulate:
    def test_writes_trajectory_and_manifest(self, tmp_path, params_file, cell):
        profile = Profile.uniform(np.full(50, -2.0))
        prof_path = tmp_path / "prof.csv"
        write_profile(profile, prof_path)
        out = tmp_path / "traj.csv"
        rc = main([
            "simulate", "--params", params_file, "--profile", str(prof_path),
            "--out", str(out), "--init-soc", "0.7",
        ])
        assert rc == 0
        lines = read_lines(out)
        assert lines[0] == "t,i,v,z,v_r1,v_r2"
        assert len(lines) == 51
        first_z = float(lines[1].split(",")[3])
        assert first_z == pytest.approx(0.7 - 2.0 / cell.q_max, rel=1e-12)
        manifest = RunManifest.from_json((tmp_path / "traj.csv.manifest.json").read_text())
        assert manifest.config["command"] == "simulate"
        assert set(manifest.input_digests) == {"params", "profile"}

    def test_repeat_runs_byte_identical(self, tmp_path, params_file):
        profile = Profile.uniform(np.sin(np.linspace(0, 6, 80)) * 3.0)
        prof_path = tmp_path / "p.csv"
        write_profile(profile, prof_path)
        args = ["simulate", "--params", params_file, "--profile", str(prof_path)]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestFitOcv:
    def test_recovers_table_from_sweeps(self, tmp_path, cell):
        # Slow symmetric charge/discharge sweeps with a small ohmic offset;
        # averaging the two branches should cancel it.
        q_max, i_mag = cell.q_max, 0.5
        n = int(q_max / i_mag) + 1  # leading zero-current sample pins SoC 0
        t = np.arange(1.0, n + 1.0)
        i_chg = np.full(n, i_mag)
        i_chg[0] = 0.0
        z = np.cumsum(i_chg) / q_max
        ocv = 3.2 + 0.7 * z + 0.3 * z**2
        charge = Profile(t, i_chg, ocv + 0.01)
        discharge = Profile(t, -i_chg, ocv[::-1] - 0.01)
        c_path, d_path = tmp_path / "chg.csv", tmp_path / "dis.csv"
        write_profile(charge, c_path)
        write_profile(discharge, d_path)
        out = tmp_path / "ocv.yaml"
        rc = main([
            "fit-ocv", "--charge", str(c_path), "--discharge", str(d_path),
            "--q-max", str(q_max), "--out", str(out),
        ])
        assert rc == 0
        table = read_ocv_table(out)
        mid = 3.2 + 0.7 * 0.5 + 0.3 * 0.25
        k = np.argmin(np.abs(table.soc_grid - 0.5))
        assert table.ocv_values[k] == pytest.approx(mid, abs=2e-3)

    def test_rejects_profile_without_voltage(self, tmp_path, capsys):
        p = Profile.uniform(np.full(10, 0.5))
        path = tmp_path / "nv.csv"
        write_profile(p, path)
        rc = main([
            "fit-ocv", "--charge", str(path), "--discharge", str(path),
            "--q-max", "100", "--out", str(tmp_path / "o.yaml"),
        ])
        assert rc == 1
        assert "voltage" in capsys.readouterr().err


class TestFitParams:
    def test_end_to_end_recovery(self, tmp_path, cell):
        from socest.io import write_ocv_table

        profile = make_incremental_current_profile(1.0, 360.0, 600.0, 4, dt=1.0)
        v = predict_voltage(cell, profile, CellState(z=0.2))
        prof_path = tmp_path / "pulse.csv"
        write_profile(profile.with_signals(v=v), prof_path)
        ocv_path = tmp_path / "ocv.yaml"
        write_ocv_table(cell.ocv, ocv_path)
        out, report_path = tmp_path / "fit.yaml", tmp_path / "report.json"
        rc = main([
            "fit-params", "--profile", str(prof_path), "--ocv", str(ocv_path),
            "--q-max", str(cell.q_max),
            "--init", str(2 * cell.r0), str(2 * cell.r1), str(2 * cell.r2),
            str(2 * cell.c1), str(2 * cell.c2),
            "--init-soc", "0.2",
            "--out", str(out), "--report", str(report_path),
        ])
        assert rc == 0
        fitted = read_params(out)
        assert fitted.r0 == pytest.approx(cell.r0, rel=1e-4)
        assert fitted.r2 == pytest.approx(cell.r2, rel=1e-3)
        report = json.loads(report_path.read_text())
        assert report["converged"] is True
        assert report["final_rss"] < 1e-9


class TestEstimate:
    def test_writes_estimate_and_manifest(self, tmp_path, params_file, measured_file):
        out = tmp_path / "est.csv"
        rc = main([
            "estimate", "--params", params_file, "--profile", measured_file,
            "--kind", "aekf-mle", "--init-soc", "0.7", "--out", str(out),
        ])
        assert rc == 0
        lines = read_lines(out)
        assert lines[0] == "t,z_est"
        assert len(lines) == 401
        z_final = float(lines[-1].split(",")[1])
        assert 0.0 <= z_final <= 1.0
        manifest = RunManifest.from_json((tmp_path / "est.csv.manifest.json").read_text())
        assert manifest.config["kind"] == "aekf-mle"

    def test_truth_column_appended(self, tmp_path, params_file, measured_file):
        n = 400
        truth_path = tmp_path / "truth.csv"
        truth_path.write_text(
            "t,z\n" + "".join(f"{k + 1.0},0.8\n" for k in range(n))
        )
        out = tmp_path / "est.csv"
        rc = main([
            "estimate", "--params", params_file, "--profile", measured_file,
            "--truth", str(truth_path), "--out", str(out),
        ])
        assert rc == 0
        lines = read_lines(out)
        assert lines[0] == "t,z_est,z_true"
        assert lines[1].split(",")[2] == "0.80000000000000004"

    def test_truth_length_mismatch_fails(self, tmp_path, params_file, measured_file, capsys):
        truth_path = tmp_path / "truth.csv"
        truth_path.write_text("t,z\n1.0,0.8\n")
        rc = main([
            "estimate", "--params", params_file, "--profile", measured_file,
            "--truth", str(truth_path), "--out", str(tmp_path / "e.csv"),
        ])
        assert rc == 1
        assert "truth" in capsys.readouterr().err

    def test_missing_voltage_column_fails(self, tmp_path, params_file, capsys):
        p = Profile.uniform(np.zeros(10))
        path = tmp_path / "nv.csv"
        write_profile(p, path)
        rc = main([
            "estimate", "--params", params_file, "--profile", str(path),
            "--out", str(tmp_path / "e.csv"),
        ])
        assert rc == 1
        assert "voltage" in capsys.readouterr().err


class TestSweeps:
    def test_benchmark_writes_rows_and_seeded_manifest(self, tmp_path, params_file):
        out = tmp_path / "bench.csv"
        rc = main([
            "benchmark", "--axis", "parameter_error", "--values", "0.0", "0.2",
            "--params", params_file, "--out", str(out),
            "--trials", "2", "--duration", "600", "--seed", "42",
            "--estimators", "cc", "ekf",
        ])
        assert rc == 0
        lines = read_lines(out)
        assert lines[0] == "axis_value,estimator,mae_mean,ci_lo,ci_hi"
        assert len(lines) == 5  # 2 axis values x 2 estimators
        manifest = RunManifest.from_json((tmp_path / "bench.csv.manifest.json").read_text())
        assert manifest.master_seed == 42

    def test_sweep_window_repeatable(self, tmp_path, params_file):
        args = [
            "sweep-window", "--values", "16", "64",
            "--params", params_file, "--trials", "2", "--duration", "600",
            "--estimators", "aekf-mle",
        ]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestErrorHandling:
    def test_missing_file_exits_1(self, tmp_path, params_file, capsys):
        rc = main([
            "simulate", "--params", params_file, "--profile",
            str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o.csv"),
        ])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_malformed_profile_exits_1(self, tmp_path, params_file, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,i\n1,a\n")
        rc = main([
            "simulate", "--params", params_file, "--profile", str(bad),
            "--out", str(tmp_path / "o.csv"),
        ])
        assert rc == 1
        assert "line 2" in capsys.readouterr().err

    def test_usage_error_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["estimate", "--kind", "bogus"])
        assert exc.value.code == 2

    def test_no_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
