import filecmp
import subprocess
import sys

import pytest

from dpasignal.cli import run
from dpasignal.config import load_config

CONFIG = """\
[generate]
n_patients = 600
n_drugs = 12
n_conditions = 9
n_spiked = 3
seed = 4

[bag]
k = 3
seed = 2

[output]
top_k = 5

[paths]
data_dir = data
out_dir = out
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG)
    return path


def cli(*args):
    return run([str(a) for a in args])


def test_step_by_step(cfg_path, capsys):
    root = cfg_path.parent
    assert cli("generate", "-c", cfg_path) == 0
    for name in ("patients.csv", "drug_eras.csv", "conditions.csv", "truth.csv",
                 "config.resolved.ini"):
        assert (root / "data" / name).is_file()
    assert cli("count", "-c", cfg_path) == 0
    assert (root / "out" / "counts.npz").is_file()
    assert cli("rate", "-c", cfg_path) == 0
    assert (root / "out" / "rated_dpa1.csv").read_text().startswith(
        "year,drug_id,condition_id,score\n1,")
    assert cli("bag", "-c", cfg_path) == 0
    report = (root / "out" / "bag_report.csv").read_text().splitlines()
    assert report[0] == "replicate,delta,n_patients" and len(report) == 4
    assert cli("fuse", "-c", cfg_path) == 0
    assert cli("evaluate", "-c", cfg_path) == 0
    assert "mean_ap=" in capsys.readouterr().out
    assert (root / "out" / "evaluation_fused.csv").read_text().splitlines()[-1].startswith("mean,")
    assert cli("report", "-c", cfg_path) == 0
    for name in ("top_pairs.csv", "trajectories.png", "histogram.png", "kernel.png"):
        assert (root / "out" / "report" / name).stat().st_size > 0


def test_pipeline_rerun_is_byte_identical(cfg_path):
    root = cfg_path.parent
    assert cli("pipeline", "-c", cfg_path) == 0
    first = {p.relative_to(root): p.read_bytes() for p in root.rglob("*")
             if p.is_file() and p.name != "timings.csv" and p != cfg_path}
    assert cli("pipeline", "-c", cfg_path, "runtime.workers=2") == 0
    second = {p.relative_to(root): p.read_bytes() for p in root.rglob("*")
              if p.is_file() and p.name != "timings.csv" and p != cfg_path}
    assert first.keys() == second.keys()
    assert [k for k in first if first[k] != second[k]] == []
    for name in ("evaluation_dpa1.csv", "evaluation_dpa2.csv", "evaluation_fused.csv",
                 "fused.csv", "bagged_dpa1.csv", "bagged_dpa2.csv", "timings.csv"):
        assert (root / "out" / name).is_file()


def test_evaluate_perfect_submission(tmp_path, capsys):
    (tmp_path / "truth.csv").write_text(
        "drug_id,condition_id,label\n1,1,1\n2,2,1\n3,3,0\n")
    (tmp_path / "sub.csv").write_text(
        "year,drug_id,condition_id,score\n"
        "1,1,1,0.9\n1,2,2,0.8\n1,3,3,0.1\n2,2,2,3\n2,1,1,2\n2,1,3,1\n")
    assert cli("evaluate", "--input", tmp_path / "sub.csv", "--truth", tmp_path / "truth.csv",
               f"paths.out_dir={tmp_path / 'o'}") == 0
    assert "mean_ap=1.000000" in capsys.readouterr().out
    assert (tmp_path / "o" / "evaluation_sub.csv").read_text().splitlines()[-1] == "mean,1.000000"


def test_fuse_with_tau_zero_reproduces_dpa2(cfg_path):
    root = cfg_path.parent
    assert cli("pipeline", "-c", cfg_path) == 0
    out = root / "tau0.csv"
    assert cli("fuse", "-c", cfg_path, "ensemble.tau=0", "--output", out) == 0
    assert filecmp.cmp(out, root / "out" / "bagged_dpa2.csv", shallow=False)


def test_dense_submission_shape(tmp_path):
    path = tmp_path / "dense.ini"
    path.write_text(CONFIG.replace("n_drugs = 12", "n_drugs = 50")
                    .replace("n_conditions = 9", "n_conditions = 40")
                    .replace("n_patients = 600", "n_patients = 200"))
    assert cli("generate", "-c", path) == 0
    assert cli("bag", "-c", path, "output.dense=true", "bag.k=1") == 0
    lines = (tmp_path / "out" / "bagged_dpa1.csv").read_text().splitlines()
    assert len(lines) - 1 == 10 * 50 * 40


def test_scope_override_limits_rows(cfg_path):
    root = cfg_path.parent
    assert cli("generate", "-c", cfg_path) == 0
    assert cli("bag", "-c", cfg_path, "scope.drug_min=1", "scope.drug_max=4") == 0
    rows = (root / "out" / "bagged_dpa1.csv").read_text().splitlines()[1:]
    assert {int(r.split(",")[1]) for r in rows} <= {1, 2, 3, 4}


def test_echoed_config(cfg_path):
    assert cli("generate", "-c", cfg_path, "generate.seed=9") == 0
    text = (cfg_path.parent / "data" / "config.resolved.ini").read_text()
    assert "seed = 9" in text
    assert "[runtime]" not in text
    echoed = cfg_path.parent / "echo.ini"
    echoed.write_text(text)
    again = load_config(echoed)
    assert again.gen == load_config(cfg_path, ["generate.seed=9"]).gen


class TestErrors:
    def check(self, capsys, code, *args, cls=None):
        assert cli(*args) == code
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("error: ")
        if cls:
            assert err[0].startswith(f"error: {cls}:")

    def test_unknown_subcommand(self, capsys):
        self.check(capsys, 1, "explode", cls="UsageError")

    def test_unknown_key(self, cfg_path, capsys):
        self.check(capsys, 1, "generate", "-c", cfg_path, "bag.kk=3", cls="ConfigError")

    def test_bad_value(self, cfg_path, capsys):
        self.check(capsys, 1, "generate", "-c", cfg_path, "ensemble.tau=1.5", cls="ConfigError")

    def test_missing_config(self, tmp_path, capsys):
        self.check(capsys, 1, "count", "-c", tmp_path / "nope.ini", cls="ConfigError")

    def test_same_dirs(self, cfg_path, capsys):
        self.check(capsys, 1, "count", "-c", cfg_path, "paths.out_dir=data", cls="ConfigError")

    def test_invalid_data(self, cfg_path, capsys):
        assert cli("generate", "-c", cfg_path) == 0
        eras = cfg_path.parent / "data" / "drug_eras.csv"
        eras.write_text(eras.read_text() + "1,2,50,10\n")
        self.check(capsys, 2, "count", "-c", cfg_path, cls="DataValidationError")

    def test_unreadable_score_file(self, cfg_path, capsys):
        bad = cfg_path.parent / "garbage.csv"
        bad.write_bytes(b"\x00\x01not,a,csv")
        self.check(capsys, 2, "report", "-c", cfg_path, "--input", bad)

    def test_corrupt_checkpoint(self, cfg_path, capsys):
        (cfg_path.parent / "out").mkdir()
        (cfg_path.parent / "out" / "counts.npz").write_bytes(b"not a zip")
        self.check(capsys, 3, "rate", "-c", cfg_path)


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "dpasignal.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "pipeline" in proc.stdout
