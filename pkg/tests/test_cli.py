import json
import subprocess
import sys

import pytest

from qdistill.cli import main
from qdistill.harness import read_records


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


class TestCommands:
    def test_train_then_evaluate(self, tmp_path, capsys):
        assert run(tmp_path / "t", "train", "--env", "wn2m2", "--f0", "0.9", "--length-km", "10", "--scale", "0.01",
                   "--seed", "3") == 0
        assert (tmp_path / "t" / "policy.npz").exists()
        curve = read_records(tmp_path / "t" / "learning_curve.csv")
        assert len(curve) == 5 and "wall_time" not in curve[0]

        code = run(tmp_path / "e", "evaluate", "--env", "wn2m2", "--f0", "0.9", "--length-km", "10",
                   "--policy", str(tmp_path / "t" / "policy.npz"), "--scale", "0.01")
        assert code == 0
        out = capsys.readouterr().out
        assert "utility" in out
        rows = read_records(tmp_path / "e" / "evaluation.csv")
        assert {r["policy_kind"] for r in rows} == {"rl"} and len(rows) == 2
        report = json.loads((tmp_path / "e" / "evaluation.json").read_text())
        assert report["mean"] == pytest.approx(sum(r["utility_value"] for r in rows) / 2)

    def test_evaluate_thresholds(self, tmp_path):
        assert run(tmp_path, "evaluate", "--length-km", "10", "--thresholds", "0.9,0.87", "--scale", "0.01") == 0
        assert read_records(tmp_path / "evaluation.csv")[0]["policy_kind"] == "baseline"

    def test_baseline_search(self, tmp_path, capsys):
        assert run(tmp_path, "baseline-search", "--length-km", "10", "--scale", "0.01") == 0
        best = json.loads((tmp_path / "baseline.json").read_text())
        assert best["f_consume"] == 0.9
        assert len((tmp_path / "grid.csv").read_text().splitlines()) == 16

    def test_sweep_with_config(self, tmp_path):
        cfg = tmp_path / "sweep.ini"
        cfg.write_text("[experiment]\nenvironment = wn2m3\nutility = bb84\nlink_lengths_km = 5, 50\nf0 = 0.9\n"
                       "scale = 0.01\n\n[basis]\ndependent_order = 2\n")
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
        names = {p.name for p in (tmp_path / "s").iterdir()}
        assert {"results.csv", "summary.json", "utility_vs_length.svg", "reldiff_vs_length.svg"} <= names

    def test_oracle_check(self, capsys):
        assert main(["oracle-check", "--samples", "5000"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and out.count("PASS") == 2 + 36


class TestErrors:
    def test_unknown_flag(self, capsys):
        assert main(["train", "--bogus"]) != 0
        assert "unrecognized" in capsys.readouterr().err

    def test_unknown_command(self):
        assert main(["fly"]) != 0

    def test_missing_config(self, tmp_path, capsys):
        assert main(["sweep", "--config", str(tmp_path / "none.ini")]) != 0
        assert "not found" in capsys.readouterr().err

    def test_malformed_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[experiment]\nf0 = high\n")
        assert main(["train", "--config", str(bad), "--length-km", "10"]) != 0
        assert "malformed" in capsys.readouterr().err

    def test_invalid_value(self, tmp_path, capsys):
        assert run(tmp_path, "train", "--length-km", "10", "--f0", "1.5") != 0
        assert "error" in capsys.readouterr().err

    def test_missing_policy_file(self, tmp_path, capsys):
        assert run(tmp_path, "evaluate", "--policy", str(tmp_path / "none.npz")) != 0

    def test_train_needs_single_length(self, tmp_path, capsys):
        assert run(tmp_path, "train", "--scale", "0.01") != 0
        assert "length" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "qdistill", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "oracle-check" in proc.stdout
