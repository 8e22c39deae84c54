import csv

import numpy as np
import pytest

from fdpn.cli import _overrides, main
from fdpn.config import load_config
from fdpn.errors import ValidationError
from fdpn.tensorio import load_tensor

TINY = ["--T", "4", "--B", "4", "--R", "4", "--epochs", "3", "--snippet-steps", "20"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "ds"), "--num-videos", "8", "--num-test", "4",
                 "--frame-count", "64", "--min-duration", "8", "--max-duration", "24", "--seed", "2"]) == 0
    assert main(["train", "--dataset", str(root / "ds"), "--run-dir", str(root / "run"), *TINY]) == 0
    return root


def test_override_parsing():
    assert _overrides(["--top-k", "2", "--lr=0.1"]) == {"top_k": "2", "lr": "0.1"}
    with pytest.raises(ValidationError):
        _overrides(["--lr"])
    with pytest.raises(ValidationError):
        _overrides(["stray"])


def test_train_writes_config_with_overrides(workspace):
    cfg = load_config(workspace / "run" / "config.txt")
    assert (cfg.T, cfg.B, cfg.R, cfg.epochs) == (4, 4, 4, 3)
    assert (workspace / "run" / "loss_log.csv").exists()


def test_config_file_and_flag_precedence(workspace, tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("# tiny run\nT=4\nB=4\nR=4\nepochs=1\nsnippet_steps=5\ntop_k=9\n")
    assert main(["train", "--dataset", str(workspace / "ds"), "--run-dir", str(tmp_path / "r"),
                 "--config", str(conf), "--top-k", "2", "--seed", "5"]) == 0
    cfg = load_config(tmp_path / "r" / "config.txt")
    assert (cfg.top_k, cfg.seed, cfg.epochs) == (2, 5, 1)


def test_eval_and_report(workspace, capsys):
    assert main(["eval", "--dataset", str(workspace / "ds"), "--run-dir", str(workspace / "run")]) == 0
    out = capsys.readouterr().out
    assert "auc_roc:" in out and "snippet_baseline_auc_roc:" in out
    assert (workspace / "run" / "eval" / "summary.csv").exists()
    assert (workspace / "run" / "eval_snippet" / "scores.csv").exists()
    assert main(["report", "--run-dir", str(workspace / "run"), "--bucket-edges", "0,1,inf"]) == 0
    rows = list(csv.DictReader(open(workspace / "run" / "duration_buckets.csv")))
    assert rows and {r["threshold"] for r in rows} == {"0.6", "0.7", "0.8", "0.9"}


@pytest.mark.parametrize("mode", ["network_only", "saliency_only", "combined"])
def test_eval_dps_modes(workspace, tmp_path, mode):
    assert main(["eval", "--dataset", str(workspace / "ds"), "--run-dir", str(workspace / "run"),
                 "--dps-mode", mode]) == 0


def test_predict(workspace, tmp_path):
    video = workspace / "ds" / "frames" / "test_001.fdpn"
    assert main(["predict", "--run-dir", str(workspace / "run"), "--video", str(video), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "frame_scores.csv")))
    assert len(rows) == 64
    assert all(0.0 <= float(r["score"]) <= 1.0 for r in rows)
    direction = list(csv.DictReader(open(tmp_path / "direction.csv")))[0]
    assert list(direction) == ["left_back", "center", "right_back"]
    assert abs(sum(map(float, direction.values())) - 1.0) < 1e-6


def test_mask_and_extract(workspace, tmp_path):
    assert main(["mask", "--dataset", str(workspace / "ds"), "--out", str(tmp_path / "m"), "--T", "4",
                 "--top-k", "1"]) == 0
    masks = load_tensor(tmp_path / "m" / "train_000.mask.fdpn")
    assert masks.shape == (64, 3, 3) and np.all(masks.sum(axis=(1, 2)) == 1)
    assert main(["extract", "--dataset", str(workspace / "ds"), "--out", str(tmp_path / "f"), "--T", "4"]) == 0
    assert load_tensor(tmp_path / "f" / "train_000.snippet.fdpn").shape == (4, 64)
    assert load_tensor(tmp_path / "f" / "train_000.frame.fdpn").shape == (64, 32)


def test_precomputed_features_round_trip(workspace, tmp_path):
    feats = tmp_path / "f"
    assert main(["extract", "--dataset", str(workspace / "ds"), "--out", str(feats), "--T", "4"]) == 0
    assert main(["train", "--dataset", str(workspace / "ds"), "--run-dir", str(tmp_path / "r"), *TINY,
                 "--snippet-extractor", "precomputed", "--frame-extractor", "precomputed",
                 "--feature-dir", str(feats)]) == 0
    # identical features, so identical training
    assert (tmp_path / "r" / "loss_log.csv").read_bytes() == (workspace / "run" / "loss_log.csv").read_bytes()


def test_saliency_from_file(workspace, tmp_path):
    assert main(["mask", "--dataset", str(workspace / "ds"), "--out", str(tmp_path / "m"), "--T", "4"]) == 0
    assert main(["train", "--dataset", str(workspace / "ds"), "--run-dir", str(tmp_path / "r"), *TINY,
                 "--saliency", "file", "--saliency-dir", str(tmp_path / "m")]) == 0
    assert (tmp_path / "r" / "loss_log.csv").read_bytes() == (workspace / "run" / "loss_log.csv").read_bytes()


def test_exit_codes(workspace, tmp_path, capsys):
    ds = str(workspace / "ds")
    assert main(["train", "--dataset", ds, "--run-dir", str(tmp_path / "a"), "--gamma", "-1"]) == 2
    assert main(["train", "--dataset", ds, "--run-dir", str(tmp_path / "b"), "--no-such-key", "1"]) == 2
    assert main(["eval", "--dataset", ds, "--run-dir", str(workspace / "run"),
                 "--checkpoint", str(tmp_path / "missing.fdpc")]) == 3
    assert main(["predict", "--run-dir", str(workspace / "run"), "--video", str(tmp_path / "nope.fdpn"),
                 "--out", str(tmp_path)]) == 3
    assert main(["train", "--dataset", ds, "--run-dir", str(tmp_path / "c"), *TINY, "--lr", "1e30",
                 "--optimizer", "sgd"]) == 3
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--dataset", ds, "--run-dir", "x", "--dps-mode", "both"])
    assert exc.value.code == 2
