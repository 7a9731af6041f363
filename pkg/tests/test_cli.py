import json
import subprocess
import sys

import pytest

from richsgd.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUN, main

SMALL = ("experiment.n_train=200\nexperiment.n_test=100\nexperiment.epochs=1\nexperiment.batch=32\n"
         "schedule.eta=0.02\nexperiment.timing=false\n")


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL)
    return path


def test_train_writes_results_and_resolved_config(tmp_path, cfg):
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == EXIT_OK
    resolved = (out / "resolved.cfg").read_text()
    assert "experiment.seeds=3\n" in resolved and "experiment.batch=32\n" in resolved
    assert "mechanism.kind=hmcar\n" in resolved  # defaults materialized
    lines = (out / "results.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 2


def test_train_is_byte_deterministic(tmp_path, cfg):
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_config_errors_exit_one(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("experiment.unknown=1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    bad.write_text("experiment.methods=rich-median\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["train", "--threads", "0", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_failure_exits_two(tmp_path, cfg):
    cfg.write_text(SMALL + "schedule.eta=1e6\nexperiment.epochs=6\nexperiment.methods=zero\n")
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == EXIT_RUN
    assert (out / "failures.csv").exists()


def test_generate_and_estimate_mech(tmp_path, cfg):
    cfg.write_text(SMALL + "mechanism.kind=smar\n")
    out = tmp_path / "g"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    header = (out / "train.csv").read_text().splitlines()[0]
    assert header.endswith(",y") and "NA" in (out / "train.csv").read_text()
    assert len((out / "w_star.txt").read_text().split()) == 10
    assert main(["estimate-mech", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert "p_hat=" in (out / "estimate.cfg").read_text()


def test_bias_sweep_command(tmp_path):
    out = tmp_path / "s"
    assert main(["bias-sweep", "--out", str(out)]) == EXIT_OK
    assert (out / "slopes.csv").read_text().splitlines()[0] == "order,linking,slope,exact_zero"


def test_robustness_command(tmp_path, cfg):
    cfg.write_text(SMALL + "robustness.deltas=0,0.05\nexperiment.family=logistic\n"
                   "experiment.dataset=synth_a_logistic\n")
    out = tmp_path / "r"
    assert main(["robustness", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert (out / "robustness.csv").exists()


def test_verify_command(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "--out", str(out)]) == EXIT_OK
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["all_passed"] and len(verdict["checks"]) == 4


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "richsgd.cli", "verify", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "PASS" in proc.stdout
