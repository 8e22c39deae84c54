import csv
import dataclasses

import numpy as np
import pytest
import torch

from fdpn.config import RunConfig, load_config
from fdpn.datamodel import Dataset
from fdpn.errors import CheckpointError, TrainingError, ValidationError
from fdpn.evalmetrics import read_report
from fdpn.pipeline import (
    FDPN,
    derive_seeds,
    evaluate,
    init_seeds,
    load_checkpoint,
    predict,
    prepare_dataset,
    prepare_video,
    save_checkpoint,
    steps_per_epoch,
    train,
)


def _log(path):
    return path.read_bytes()


def test_seed_streams_are_distinct_and_stable():
    a, b = derive_seeds(3), derive_seeds(3)
    assert [s.generate_state(2).tolist() for s in a.values()] == [s.generate_state(2).tolist() for s in b.values()]
    states = {tuple(s.generate_state(2)) for s in a.values()}
    assert len(states) == 3
    assert init_seeds(3) != init_seeds(4)


def test_steps_per_epoch():
    assert steps_per_epoch(10, 7, 4) == 3
    assert steps_per_epoch(1, 1, 16) == 1


def test_prepare_video_shapes(tiny_dataset, tiny_cfg):
    s = tiny_dataset.split("train")[0]
    v = prepare_video(s, tiny_dataset.frames(s.video_id), tiny_cfg)
    S = 64 // 16
    assert v.snippet.shape == (S, 64) and v.frame.shape == (S, 16, 32)
    assert v.saliency3.shape == (S, 16, 3) and v.valid.shape == (S, 16)
    np.testing.assert_allclose(v.saliency3.sum(-1), 1.0, atol=1e-6)


def test_padding_marks_invalid_frames(tiny_dataset):
    cfg = RunConfig(T=3, N=16)  # 64 frames pad to 96
    s = tiny_dataset.split("train")[0]
    v = prepare_video(s, tiny_dataset.frames(s.video_id), cfg)
    assert v.valid.shape == (6, 16) and v.valid.sum() == 64 and v.valid.reshape(-1)[64:].sum() == 0


def test_training_is_deterministic(tiny_dataset, tiny_cfg, tmp_path):
    a = train(tiny_cfg, tiny_dataset, tmp_path / "a")
    b = train(tiny_cfg, tiny_dataset, tmp_path / "b")
    assert _log(a.loss_log) == _log(b.loss_log)
    header = a.loss_log.read_text().splitlines()[0]
    assert header == "step,L_BF,L_FR,L_smooth,L_DF,total"
    steps = [int(r["step"]) for r in csv.DictReader(open(a.loss_log))]
    assert steps == list(range(1, a.steps + 1))
    assert (tmp_path / "a" / "config.txt").read_text() == tiny_cfg.to_text()


def test_resume_reproduces_uninterrupted_log(tiny_dataset, tiny_cfg, tmp_path):
    cfg = dataclasses.replace(tiny_cfg, epochs=5)
    full = train(cfg, tiny_dataset, tmp_path / "full")
    train(cfg, tiny_dataset, tmp_path / "split", stop_after=3)
    resumed = train(cfg, tiny_dataset, tmp_path / "split", resume=True)
    assert resumed.steps == full.steps
    assert _log(resumed.loss_log) == _log(full.loss_log)
    t_full, _ = load_checkpoint(full.checkpoint, cfg)[0].state(), None
    t_res = load_checkpoint(resumed.checkpoint, cfg)[0].state()
    assert all(np.array_equal(t_full[k], t_res[k]) for k in t_full)


def test_config_snapshot_is_immutable(tiny_dataset, tiny_cfg, tmp_path):
    train(tiny_cfg, tiny_dataset, tmp_path / "r", stop_after=1)
    with pytest.raises(ValidationError):
        train(dataclasses.replace(tiny_cfg, lr=0.5), tiny_dataset, tmp_path / "r")
    assert load_config(tmp_path / "r" / "config.txt") == tiny_cfg


def test_missing_normal_videos_fails_before_compute(tiny_dataset, tiny_cfg, tmp_path):
    only_abnormal = Dataset(tiny_dataset.root, [s for s in tiny_dataset.samples if s.is_abnormal])
    with pytest.raises(ValidationError):
        train(tiny_cfg, only_abnormal, tmp_path / "r")
    assert not (tmp_path / "r").exists()


def test_non_finite_loss_aborts_and_keeps_checkpoint(tiny_dataset, tiny_cfg, tmp_path):
    cfg = dataclasses.replace(tiny_cfg, lr=1e30, optimizer="sgd", checkpoint_every=1)
    with pytest.raises(TrainingError):
        train(cfg, tiny_dataset, tmp_path / "r")
    model, meta, _ = load_checkpoint(tmp_path / "r" / "checkpoints" / "latest.fdpc", cfg)
    assert all(np.all(np.isfinite(t)) for t in model.state().values())
    rows = list(csv.DictReader(open(tmp_path / "r" / "loss_log.csv")))
    assert len(rows) >= meta["step"]


def test_untrained_checkpoint_scores_half(tiny_dataset, tiny_cfg, tmp_path):
    model = FDPN(tiny_cfg, init_seeds(0))
    path = tmp_path / "init.fdpc"
    save_checkpoint(path, model, None, 0, None, tiny_cfg.hash())
    frame_report, _ = evaluate(path, tiny_dataset, tiny_cfg, tmp_path / "out")
    for scores in frame_report.per_video_scores.values():
        assert np.all(scores == 0.5)
    assert frame_report.auc_roc == pytest.approx(0.5)
    assert frame_report.config_hash == tiny_cfg.hash()
    assert read_report(tmp_path / "out" / "eval").auc_roc == frame_report.auc_roc


def test_checkpoint_mismatch(tiny_dataset, tiny_cfg, tmp_path):
    model = FDPN(tiny_cfg, init_seeds(0))
    path = tmp_path / "c.fdpc"
    save_checkpoint(path, model, None, 0, None, tiny_cfg.hash())
    with pytest.raises(CheckpointError):
        load_checkpoint(path, dataclasses.replace(tiny_cfg, width=16))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.fdpc", tiny_cfg)


def test_predict_cardinality_and_distribution(tiny_dataset, tiny_cfg, tmp_path):
    run = train(tiny_cfg, tiny_dataset, tmp_path / "r")
    frames = tiny_dataset.frames("test_000")[:50]  # not a multiple of T*N
    pred = predict(run.checkpoint, frames, tiny_cfg)
    assert pred.frame_scores.shape == (50,) and pred.snippet_broadcast.shape == (50,)
    assert abs(pred.direction.sum() - 1.0) < 1e-6 and np.all(pred.direction >= 0)


def test_joint_training_updates_snippet_net(tiny_dataset, tiny_cfg, tmp_path):
    cfg = dataclasses.replace(tiny_cfg, joint_training=True, epochs=2, snippet_steps=0)
    initial = FDPN(cfg, init_seeds(cfg.seed)).state()
    run = train(cfg, tiny_dataset, tmp_path / "r")
    trained = load_checkpoint(run.checkpoint, cfg)[0].state()
    assert not np.array_equal(initial["snippet.hidden.weight"], trained["snippet.hidden.weight"])
    frozen = train(dataclasses.replace(cfg, joint_training=False), tiny_dataset, tmp_path / "f")
    kept = load_checkpoint(frozen.checkpoint, cfg)[0].state()
    assert np.array_equal(initial["snippet.hidden.weight"], kept["snippet.hidden.weight"])


def test_precomputed_snippet_network(tiny_dataset, tiny_cfg, tmp_path):
    from fdpn.features import feature_path, store_features

    rng = np.random.default_rng(0)
    for s in tiny_dataset.samples:
        store_features(feature_path(tmp_path, s.video_id, "snippet_refined"), rng.random((4, 6), dtype=np.float32))
        store_features(feature_path(tmp_path, s.video_id, "snippet_score"), rng.random(4, dtype=np.float32))
    cfg = dataclasses.replace(tiny_cfg, snippet_net="precomputed", feature_dir=str(tmp_path), epochs=1)
    run = train(cfg, tiny_dataset, tmp_path / "r")
    model, meta, _ = load_checkpoint(run.checkpoint, cfg)
    assert model.snippet_net is None and meta["architecture"]["refined_channels"] == 6


def test_loss_decreases_on_small_overfit(tiny_dataset, tmp_path):
    cfg = RunConfig(B=4, T=4, R=4, epochs=100, snippet_steps=100, checkpoint_every=1000)
    videos = prepare_dataset(tiny_dataset, cfg, "train")
    run = train(cfg, tiny_dataset, tmp_path / "r", videos=videos)
    totals = [float(r["total"]) for r in run.losses]
    assert np.mean(totals[-10:]) < 0.1 * np.mean(totals[:3])
    constant = np.full((64, 36, 72), 0.3, dtype=np.float32)
    assert predict(run.checkpoint, constant, cfg).frame_scores.max() < 0.5
