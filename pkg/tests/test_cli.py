import csv
import json

import pytest

from moppo.cli import main

CONFIG = """
[experiment]
variant = ucb
env = concave-bandit
seeds = 0,1,2
warmup = 1
stage_length = 1
stages = 3
reference_point = 0,0
hidden = 8,8

[decomposition]
step1 = 1.0
step2 = 0.1
K = 2
M = 6
N = 2
pivot_mode = include-endpoints

[ppo]
buffer_size = 32
num_envs = 32
epochs = 2
minibatch = 16
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.ini"
    cfg.write_text(CONFIG)
    assert main(["train", str(cfg), "-o", str(root / "ucb"), "--workers", "1"]) == 0
    assert main(["train", str(cfg), "-o", str(root / "fixed"), "--variant", "fixed"]) == 0
    return root


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_train_outputs(workspace):
    run = workspace / "ucb"
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["status"] == "completed"
    assert manifest["variant"] == "ucb" and manifest["seeds"] == [0, 1, 2]
    for name in ("config.ini", "stage_reports.csv", "hv_curve.csv", "archive.csv", "front.csv",
                 "selection_log.csv", "surrogate_data.csv", "training_log.csv", "timing.csv",
                 "hv_curve.png", "front.png"):
        assert (run / name).exists(), name
        assert name in manifest["outputs"]
    assert len(rows(run / "hv_curve.csv")) == 4 * 3
    assert len(list((run / "checkpoints").glob("policy_k*_seed*.txt"))) == 6


def test_stage_override(workspace):
    out = workspace / "short"
    assert main(["train", str(workspace / "run.ini"), "-o", str(out), "--stages", "2",
                 "--seeds", "5"]) == 0
    assert {int(r["stage"]) for r in rows(out / "hv_curve.csv")} == {0, 1, 2}
    assert {int(r["seed"]) for r in rows(out / "hv_curve.csv")} == {5}


def test_unknown_env_exit_2(workspace, capsys):
    code = main(["train", str(workspace / "run.ini"), "-o", str(workspace / "bad"),
                 "--set", "env=walker"])
    assert code == 2
    err = capsys.readouterr().err
    assert "concave-bandit" in err and "pointmass-2" in err


def test_missing_config_exit_2(tmp_path):
    assert main(["train", str(tmp_path / "none.ini"), "-o", str(tmp_path / "o")]) == 2


def test_runtime_failure_exit_3(workspace, monkeypatch):
    import moppo.cli as cli

    def boom(*a, **k):
        raise RuntimeError("simulated failure")

    monkeypatch.setattr(cli, "run_experiment", boom)
    out = workspace / "failed"
    assert main(["train", str(workspace / "run.ini"), "-o", str(out)]) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed" and "simulated" in manifest["error"]
    assert (out / "config.ini").exists()


def test_report(workspace, capsys):
    out = workspace / "report"
    assert main(["report", str(workspace / "ucb"), str(workspace / "fixed"), "-o", str(out)]) == 0
    table = rows(out / "comparison.csv")
    assert [r["variant"] for r in table] == ["ucb", "fixed"]
    for r in table:
        assert float(r["hv_std"]) >= 0
    assert (out / "ucb" / "pf.csv").exists() and (out / "fixed" / "pf.csv").exists()
    assert (out / "hv_curves.png").exists() and (out / "fronts.png").exists()
    text = (out / "comparison.txt").read_text()
    assert "±" in text and "reference point: (0, 0)" in text
    # idempotent
    first = (out / "comparison.csv").read_bytes()
    assert main(["report", str(workspace / "ucb"), str(workspace / "fixed"), "-o", str(out)]) == 0
    assert (out / "comparison.csv").read_bytes() == first


def test_report_single_seed_std_zero(workspace):
    out = workspace / "report1"
    assert main(["report", str(workspace / "short"), "-o", str(out)]) == 0
    r = rows(out / "comparison.csv")[0]
    assert float(r["hv_std"]) == 0 and float(r["eu_std"]) == 0


def test_report_corrupt_manifest(workspace, tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    assert main(["report", str(tmp_path), "-o", str(tmp_path / "r")]) == 2
    assert main(["report", str(workspace / "failed"), "-o", str(tmp_path / "r")]) == 2


def test_interpolate(workspace):
    out = workspace / "interp"
    assert main(["interpolate", str(workspace / "ucb"), "--counts", "2,4,6", "-o", str(out)]) == 0
    hv = rows(out / "hv_vs_n.csv")
    assert [int(r["n"]) for r in hv] == [2, 4, 6]
    means = [float(r["hv_mean"]) for r in hv]
    assert all(b >= a for a, b in zip(means, means[1:]))
    assert len(rows(out / "sparsity_vs_n.csv")) == 3
    assert (out / "hv_vs_n.png").exists()


def test_interpolate_errors(workspace, tmp_path):
    assert main(["interpolate", str(workspace / "ucb"), "--counts", "6,4"]) == 2
    assert main(["interpolate", str(workspace / "failed")]) == 2


def test_envs_and_validate(workspace, capsys):
    assert main(["envs"]) == 0
    assert "pointmass-3" in capsys.readouterr().out
    assert main(["validate", str(workspace / "run.ini")]) == 0
    assert "hash=" in capsys.readouterr().out
    assert main(["validate", str(workspace / "run.ini"), "--set", "K=9"]) == 2
