#!/usr/bin/env python3
"""
Command-line tests: synth, train, eval, gradcheck, params, curves and configuration errors
"""

import pandas as pd
import pytest
from typer.testing import CliRunner

from main import app
from src.data.synthgen import read_manifest

runner = CliRunner()

THIRDS = "train_ratio = 0.333333\nval_ratio = 0.333333\ntest_ratio = 0.333334  # rounding\n"


def invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


def synth_small(run_dir, config, n=6):
    return invoke("synth", "--n", n, "--preset", "desk", "--raw-seconds", 10, "--height", 32, "--width", 32,
                  "--run-dir", run_dir, "--config", config)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Six desk-scale clips and a one-epoch, five-seed Model-C run"""
    root = tmp_path_factory.mktemp("cli")
    config = root / "thirds.conf"
    config.write_text(THIRDS)
    result = synth_small(root / "run", config)
    assert result.exit_code == 0, result.output
    result = invoke("train", "--model", "C", "--epochs", 1, "--n", 1, "--seeds", 5, "--preset", "desk",
                    "--run-dir", root / "run")
    assert result.exit_code == 0, result.output
    return root


@pytest.mark.parametrize("model_id,total", [("A", "315,969"), ("B", "70,817"), ("C", "277,601")])
def test_params(model_id, total, tmp_path):
    result = invoke("params", model_id, "--run-dir", tmp_path)
    assert result.exit_code == 0, result.output
    assert total in result.output
    assert "matches" in result.output


def test_params_unknown_model(tmp_path):
    assert invoke("params", "D", "--run-dir", tmp_path).exit_code == 2


def test_synth_three_clips_one_per_split(tmp_path):
    config = tmp_path / "thirds.conf"
    config.write_text(THIRDS)
    result = invoke("synth", "--n", 3, "--preset", "desk", "--raw-seconds", 1, "--height", 16, "--width", 16,
                    "--run-dir", tmp_path / "run", "--config", config)
    assert result.exit_code == 0, result.output
    entries = read_manifest(tmp_path / "run" / "data" / "manifest.csv")
    assert sorted(e.split for e in entries) == ["test", "train", "val"]
    assert all((tmp_path / "run" / "data" / e.path).is_file() for e in entries)


def test_synth_rerun_gives_identical_manifest(workspace, tmp_path):
    result = synth_small(tmp_path / "again", workspace / "thirds.conf")
    assert result.exit_code == 0, result.output
    first = (workspace / "run" / "data" / "manifest.csv").read_bytes()
    assert (tmp_path / "again" / "data" / "manifest.csv").read_bytes() == first


def test_train_writes_seed_directories(workspace):
    for seed in range(5):
        seed_dir = workspace / "run" / f"seed_{seed}"
        assert (seed_dir / "best.ckpt").is_file()
        log = pd.read_csv(seed_dir / "train_log.csv")
        assert len(log) == 1 and log["seconds"].tolist() == [0.0]
    assert (workspace / "run" / "run.log").is_file()


def test_train_is_deterministic(workspace, tmp_path):
    manifest = workspace / "run" / "data" / "manifest.csv"
    result = invoke("train", "--model", "C", "--epochs", 1, "--n", 1, "--preset", "desk",
                    "--manifest", manifest, "--run-dir", tmp_path)
    assert result.exit_code == 0, result.output
    for name in ("train_log.csv", "best.ckpt"):
        assert (tmp_path / "seed_0" / name).read_bytes() == (workspace / "run" / "seed_0" / name).read_bytes()


def test_eval_over_seeds(workspace):
    result = invoke("eval", workspace / "run", "--seeds", 2, "--preset", "desk", "--run-dir", workspace / "run")
    assert result.exit_code == 0, result.output
    metrics = pd.read_csv(workspace / "run" / "eval" / "metrics.csv")
    assert metrics["seed"].astype(str).tolist() == ["0", "1", "summary"]
    assert metrics["report"].iloc[-1].endswith("cm")
    assert (workspace / "run" / "eval" / "residuals_1.csv").is_file()


def test_eval_five_seeds_reports_mean_and_std(workspace, tmp_path):
    result = invoke("eval", workspace / "run", "--seeds", 5, "--preset", "desk", "--run-dir", tmp_path,
                    "--manifest", workspace / "run" / "data" / "manifest.csv")
    assert result.exit_code == 0, result.output
    metrics = pd.read_csv(tmp_path / "eval" / "metrics.csv")
    assert metrics["seed"].astype(str).tolist() == ["0", "1", "2", "3", "4", "summary"]
    maes = metrics["mae_cm"].iloc[:5]
    assert metrics["mae_cm"].iloc[-1] == pytest.approx(maes.mean())
    assert metrics["std_cm"].iloc[-1] == pytest.approx(maes.std(ddof=1))
    assert "±" in metrics["report"].iloc[-1]


def test_eval_single_checkpoint_rejects_several_seeds(workspace, tmp_path):
    result = invoke("eval", workspace / "run" / "seed_0" / "best.ckpt", "--seeds", 5, "--preset", "desk",
                    "--run-dir", tmp_path, "--manifest", workspace / "run" / "data" / "manifest.csv")
    assert result.exit_code == 2


def test_eval_more_seeds_than_checkpoints(workspace):
    result = invoke("eval", workspace / "run", "--seeds", 6, "--preset", "desk", "--run-dir", workspace / "run")
    assert result.exit_code == 2


def test_eval_rejects_other_input_shape(workspace, tmp_path):
    """Checkpoints remember the window shape they were trained on"""
    config = tmp_path / "small.conf"
    config.write_text("target_size = 32\n")
    result = invoke("eval", workspace / "run" / "seed_0" / "best.ckpt", "--preset", "desk",
                    "--run-dir", tmp_path, "--config", config)
    assert result.exit_code == 2


def test_gradcheck_passes(tmp_path):
    result = invoke("gradcheck", "B", "--run-dir", tmp_path)
    assert result.exit_code == 0, result.output
    assert "All gradient checks passed" in result.output


def test_gradcheck_unknown_model(tmp_path):
    assert invoke("gradcheck", "Z", "--run-dir", tmp_path).exit_code == 2


def test_curves(workspace, tmp_path):
    out = tmp_path / "curves.csv"
    result = invoke("curves", workspace / "run" / "seed_0" / "train_log.csv", "--out", out,
                    "--run-dir", tmp_path)
    assert result.exit_code == 0, result.output
    tidy = pd.read_csv(out)
    assert len(tidy) == 2 and set(tidy["series"]) == {"train", "val"}


def test_curves_malformed_log(tmp_path):
    bad = tmp_path / "log.csv"
    bad.write_text("epoch;loss\n1;2\n")
    assert invoke("curves", bad, "--run-dir", tmp_path).exit_code == 2


def test_unknown_config_key(tmp_path):
    config = tmp_path / "bad.conf"
    config.write_text("learning_speed = 3\n")
    result = invoke("synth", "--n", 3, "--run-dir", tmp_path, "--config", config)
    assert result.exit_code == 2
    assert "learning_speed" in result.output


def test_invalid_value_exits_with_usage_code(tmp_path):
    assert invoke("train", "--epochs", 0, "--run-dir", tmp_path).exit_code == 2


def test_help_lists_configuration_keys():
    result = invoke("--help")
    assert result.exit_code == 0
    for key in ("tail_seconds", "window_seconds", "batch_size", "run_dir"):
        assert key in result.output
