import json
import subprocess
import sys
from pathlib import Path

import pytest

from propriobench.cli import main
from propriobench.config import ConfigError, RunConfig


def run_cli(*args):
    return main(list(args))


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run_cli("gen", "--out", str(out), "--profile", "circle",
                   "--duration", "2", "--rate", "100", "--seed", "5") == 0
    return out


class TestGen:
    def test_writes_three_csvs_and_manifest(self, small_dataset):
        names = {p.name for p in small_dataset.iterdir()}
        assert {"sensor_data.csv", "feet_kinematics.csv", "groundtruth.csv",
                "manifest.json"} <= names
        manifest = json.loads((small_dataset / "manifest.json").read_text())
        assert manifest["seed"] == 5
        assert manifest["profile"]["kind"] == "circle"

    def test_row_count(self, tmp_path):
        out = tmp_path / "d"
        run_cli("gen", "--out", str(out), "--profile", "rest",
                "--duration", "10", "--rate", "400")
        rows = (out / "sensor_data.csv").read_text().strip().splitlines()
        assert len(rows) - 1 == 4001  # header + duration*rate + 1

    def test_bit_identical_across_runs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run_cli("gen", "--out", str(out), "--profile", "figure8",
                    "--duration", "1", "--rate", "50", "--seed", "9")
        for name in ("sensor_data.csv", "feet_kinematics.csv",
                     "groundtruth.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_invalid_profile_usage_error(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "propriobench.cli", "gen", "--out",
             str(tmp_path / "x"), "--profile", "warp"],
            capture_output=True, text=True)
        assert proc.returncode != 0
        assert "invalid choice" in proc.stderr

    def test_dump_config_lists_all_defaults(self, capsys):
        assert run_cli("gen", "--out", "/nonexistent", "--dump-config") == 0
        out = capsys.readouterr().out
        for key in RunConfig().values:
            assert key in out


class TestRun:
    def test_all_estimators_distinct_subdirectories(self, small_dataset,
                                                    tmp_path):
        out = tmp_path / "runs"
        assert run_cli("run", "--data", str(small_dataset), "--out", str(out),
                       "--estimator", "all") == 0
        for name in ("muse", "iekf", "smoother"):
            assert (out / name / "fused_state.csv").exists()

    def test_estimate_columns_deterministic(self, small_dataset, tmp_path):
        outs = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            run_cli("run", "--data", str(small_dataset), "--out", str(out),
                    "--estimator", "iekf")
            rows = (out / "iekf" / "fused_state.csv").read_text().splitlines()
            # drop the wall-clock iter_time column before comparing
            outs.append([",".join(r.split(",")[:-1]) for r in rows])
        assert outs[0] == outs[1]

    def test_init_roll_error_applies(self, small_dataset, tmp_path):
        out = tmp_path / "rolled"
        assert run_cli("run", "--data", str(small_dataset), "--out", str(out),
                       "--estimator", "muse", "--init-roll-error", "180") == 0
        header, first, *_ = (out / "muse" /
                             "fused_state.csv").read_text().splitlines()
        cols = header.split(",")
        vals = dict(zip(cols, map(float, first.split(","))))
        # quaternion starts near 180 degrees of roll
        assert abs(abs(vals["qx"]) - 1.0) < 0.05

    def test_missing_dataset_fails_cleanly(self, tmp_path):
        assert run_cli("run", "--data", str(tmp_path / "nope"),
                       "--out", str(tmp_path / "o")) == 1


class TestEval:
    def test_gt_against_itself_is_zero(self, small_dataset, tmp_path, capsys):
        out = tmp_path / "rep"
        assert run_cli("eval", "--est", str(small_dataset / "groundtruth.csv"),
                       "--gt", str(small_dataset / "groundtruth.csv"),
                       "--out", str(out)) == 0
        report = json.loads((out / "report.json").read_text())
        (name, metrics), = report.items()
        for key in ("ate_m", "rpe_trans_1frame_m", "rpe_rot_1frame_deg",
                    "ate_vel_mps"):
            assert metrics[key] == pytest.approx(0.0, abs=1e-9)

    def test_report_row_structure(self, small_dataset, tmp_path):
        out = tmp_path / "rep"
        run_cli("eval", "--est", str(small_dataset / "groundtruth.csv"),
                "--gt", str(small_dataset / "groundtruth.csv"),
                "--out", str(out))
        report = json.loads((out / "report.json").read_text())
        metrics = next(iter(report.values()))
        expected = {"ate_m", "ate_vel_mps", "rpe_trans_1m_m",
                    "rpe_trans_1frame_m", "rpe_rot_1m_deg",
                    "rpe_rot_1frame_deg", "timing_mean_s", "timing_median_s",
                    "timing_p99_s"}
        assert set(metrics) == expected

    def test_tum_input_marks_velocity_absent(self, small_dataset, tmp_path):
        tum = tmp_path / "gt.tum"
        run_cli("convert", "--input", str(small_dataset / "groundtruth.csv"),
                "--out", str(tum))
        out = tmp_path / "rep"
        assert run_cli("eval", "--est", str(tum),
                       "--gt", str(small_dataset / "groundtruth.csv"),
                       "--out", str(out)) == 0
        report = json.loads((out / "report.json").read_text())
        metrics = next(iter(report.values()))
        assert metrics["ate_vel_mps"] is None
        assert metrics["ate_m"] == pytest.approx(0.0, abs=1e-8)
        text = (out / "report.txt").read_text()
        assert "ate_vel_mps = absent" in text

    def test_span_mismatch_fails(self, small_dataset, tmp_path):
        late = tmp_path / "late.tum"
        lines = []
        for i in range(5):
            lines.append(f"{1000.0 + i} 0 0 0 0 0 0 1")
        late.write_text("\n".join(lines) + "\n")
        assert run_cli("eval", "--est", str(late),
                       "--gt", str(small_dataset / "groundtruth.csv"),
                       "--out", str(tmp_path / "rep2")) == 1


class TestConvert:
    def test_round_trip(self, small_dataset, tmp_path):
        tum = tmp_path / "t.tum"
        assert run_cli("convert", "--input",
                       str(small_dataset / "groundtruth.csv"),
                       "--out", str(tum)) == 0
        from propriobench.datamodel import load_groundtruth_csv, load_tum
        orig = load_groundtruth_csv(small_dataset / "groundtruth.csv")
        back = load_tum(tum)
        assert len(orig) == len(back)
        for a, b in zip(orig, back):
            assert abs(a.t - b.t) < 1e-9
            assert max(abs(a.p - b.p)) < 1e-9


class TestConfig:
    def test_round_trip_file(self, tmp_path):
        cfg = RunConfig()
        cfg.set("muse.k1", 2.5)
        cfg.set("smoother.window_size", 5)
        path = tmp_path / "run.cfg"
        path.write_text(cfg.dump())
        back = RunConfig.load(path)
        assert back["muse.k1"] == 2.5
        assert back["smoother.window_size"] == 5

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("nosuch.key = 1\n")
        with pytest.raises(ConfigError, match="nosuch.key"):
            RunConfig.load(path)

    def test_type_coercion(self):
        cfg = RunConfig()
        cfg.set("iekf.gating", "false")
        assert cfg["iekf.gating"] is False
        with pytest.raises(ConfigError):
            cfg.set("smoother.window_size", "many")
