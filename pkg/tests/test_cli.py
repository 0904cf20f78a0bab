"""Command-line verbs and exit codes."""

import json
import subprocess
import sys

import pytest

from scfusion.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

SMALL = "[sequence]\nn_frames = 4\nwidth = 128\nheight = 96\n"


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


class TestVerbs:
    def test_simulate_then_run_then_export(self, tmp_path, config, capsys):
        seq = tmp_path / "seq"
        assert main(["simulate", "--config", str(config), "--out", str(seq), "--blur-kernel", "5", "--blur-every", "2"]) == EXIT_OK
        assert (seq / "manifest.json").exists()

        run = tmp_path / "run"
        code = main(
            ["run", "--config", str(config), "--sequence", str(seq), "--out", str(run), "--lambda", "0.08",
             "--ransac-iters", "64", "--inlier-px", "8", "--seed", "2", "--dump-diagnostics"]
        )
        assert code == EXIT_OK
        summary = json.loads((run / "summary.json").read_text())
        assert summary["config"]["ransac"] == {**summary["config"]["ransac"], "lambda_m": 0.08, "max_iterations": 64, "inlier_threshold_px": 8.0}
        assert summary["config"]["seed"] == 2
        assert len(list((run / "diagnostics").glob("*.csv"))) == 3

        cloud = tmp_path / "cloud"
        assert main(["export-ply", str(run), "--out", str(cloud), "--lambda", "0.05"]) == EXIT_OK
        assert (cloud / "cloud.ply").read_text().startswith("ply\n")
        assert "points" in capsys.readouterr().out

    def test_suite(self, tmp_path, config):
        out = tmp_path / "suite"
        assert main(["suite", "fusion_ablation", "--config", str(config), "--out", str(out), "--frames", "3"]) == EXIT_OK
        assert (out / "report.csv").exists() and (out / "cdf.csv").exists()

    def test_console_script_module(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "scfusion.cli", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        for verb in ("simulate", "run", "suite", "export-ply"):
            assert verb in proc.stdout


class TestExitCodes:
    def test_unknown_suite(self, tmp_path, config):
        assert main(["suite", "nope", "--config", str(config), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_bad_toml(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("window_size = 4\n")
        assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_bad_flag_value(self, tmp_path, config):
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "o"), "--ransac-iters", "0"]) == EXIT_CONFIG

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == EXIT_CONFIG

    def test_missing_sequence_is_runtime_failure(self, tmp_path, config):
        code = main(["run", "--config", str(config), "--sequence", str(tmp_path / "absent"), "--out", str(tmp_path / "o")])
        assert code == EXIT_RUNTIME

    def test_export_from_missing_run(self, tmp_path):
        assert main(["export-ply", str(tmp_path / "absent"), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME
