"""Feature preparation, two-stage training, checkpointing, evaluation and prediction."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import saliency as sal
from .config import RunConfig, load_config
from .datamodel import DIRECTIONS, Dataset, VideoSample, expand_ground_truth, pad_frames
from .dps import DirectionPredictor, direction_features
from .errors import CheckpointError, ShapeError, TrainingError, ValidationError
from .evalmetrics import EvalReport, build_report, write_report
from .features import ExtractorSpec, extract_frame_features, extract_snippet_features, feature_path, load_features
from .fps import FramePredictor, fuse_features
from .losses import LOSS_NAMES, binary_focal_loss, direction_focal_loss, frame_ranking_loss, smoothness_loss, total_loss
from .nn_utils import load_numpy_state, state_to_numpy
from .snippetnet import SnippetScorer, pseudo_labels_for, train_snippet_scorer
from .tensorio import load_container, save_container

log = logging.getLogger(__name__)

LOSS_LOG_HEADER = ["step", *LOSS_NAMES, "total"]
CHECKPOINT_VERSION = 1


@dataclass
class VideoFeatures:
    """Everything the networks need for one video, snippet axis covering all padded chunks."""

    sample: VideoSample
    snippet: np.ndarray  # (S, C)
    frame: np.ndarray  # (S, N, C')
    saliency3: np.ndarray  # (S, N, 3)
    valid: np.ndarray  # (S, N) 1 for real frames, 0 for padding
    refined: np.ndarray | None = None  # (S, C'') once the snippet net has run
    snippet_scores: np.ndarray | None = None  # (S,)


def snippet_extractor(cfg: RunConfig) -> ExtractorSpec:
    return ExtractorSpec(cfg.snippet_extractor, cfg.snippet_channels, cfg.extractor_seed,
                         feature_dir=cfg.feature_dir or None)


def frame_extractor(cfg: RunConfig) -> ExtractorSpec:
    return ExtractorSpec(cfg.frame_extractor, cfg.frame_channels, cfg.extractor_seed + 1,
                         feature_dir=cfg.feature_dir or None)


def saliency_model(cfg: RunConfig, video_id: str) -> sal.SaliencyModel:
    if cfg.saliency == "file":
        return sal.PrecomputedSaliency(feature_path(cfg.saliency_dir, video_id, "saliency"))
    return sal.TemporalDifferenceSaliency()


def prepare_video(sample: VideoSample, frames: np.ndarray, cfg: RunConfig) -> VideoFeatures:
    """Pad, mask by saliency and extract snippet/frame features and direction cues."""
    if len(frames) != sample.frame_count:
        raise ShapeError(f"{sample.video_id}: manifest says {sample.frame_count} frames, file has {len(frames)}")
    padded = pad_frames(frames, cfg.T, cfg.N)
    heat = saliency_model(cfg, sample.video_id)(frames)
    heat = pad_frames(heat, cfg.T, cfg.N)
    masked, _ = sal.mask_video(padded, heat, cfg.grid_n, cfg.top_k, cfg.mask_granularity, cfg.N)
    snippet = extract_snippet_features(padded, cfg.T, cfg.N, snippet_extractor(cfg), sample.video_id)
    frame = extract_frame_features(masked, frame_extractor(cfg), sample.video_id)
    valid = np.zeros(len(padded), dtype=np.float32)
    valid[: sample.frame_count] = 1.0
    S = len(padded) // cfg.N
    return VideoFeatures(
        sample=sample,
        snippet=snippet.astype(np.float32),
        frame=frame.reshape(S, cfg.N, -1).astype(np.float32),
        saliency3=sal.direction_saliency(heat).reshape(S, cfg.N, 3).astype(np.float32),
        valid=valid.reshape(S, cfg.N),
    )


def prepare_dataset(dataset: Dataset, cfg: RunConfig, split: str) -> list[VideoFeatures]:
    return [prepare_video(s, dataset.frames(s.video_id), cfg) for s in dataset.split(split)]


# --------------------------------------------------------------------------- model bundle


class FDPN:
    """Snippet scorer (frozen after stage one) plus frame and direction predictors."""

    def __init__(self, cfg: RunConfig, seeds: tuple[int, int, int], refined_channels: int | None = None):
        self.cfg = cfg
        self.snippet_net = None
        if cfg.snippet_net == "toy":
            self.snippet_net = SnippetScorer(cfg.snippet_channels, cfg.snippet_hidden, seed=seeds[0])
            refined_channels = self.snippet_net.refined_channels
        elif refined_channels is None:
            raise ValidationError("precomputed snippet network needs refined_channels")
        self.refined_channels = refined_channels
        self.fps = FramePredictor(cfg.frame_channels + refined_channels, cfg.width, cfg.depth, cfg.pool_size,
                                  cfg.mlp_expansion, seed=seeds[1])
        self.dps = DirectionPredictor(cfg.frame_channels + cfg.snippet_channels, cfg.width, cfg.depth,
                                      cfg.pool_size, cfg.mlp_expansion, seed=seeds[2], fusion=cfg.dps_fusion)

    def attach_snippet_outputs(self, videos: list[VideoFeatures]) -> None:
        for v in videos:
            if self.snippet_net is None:
                v.refined = load_features(feature_path(self.cfg.feature_dir, v.sample.video_id, "snippet_refined"))
                v.snippet_scores = load_features(feature_path(self.cfg.feature_dir, v.sample.video_id,
                                                              "snippet_score")).reshape(-1)
                if v.refined.shape != (len(v.snippet), self.refined_channels):
                    raise ShapeError(f"{v.sample.video_id}: refined snippet features have shape {v.refined.shape}")
            else:
                with torch.no_grad():
                    refined, scores = self.snippet_net(torch.from_numpy(v.snippet))
                v.refined, v.snippet_scores = refined.numpy(), scores.numpy()

    def parameters(self):
        params = list(self.fps.parameters()) + list(self.dps.parameters())
        if self.cfg.joint_training and self.snippet_net is not None:
            params += list(self.snippet_net.parameters())
        return params

    def state(self) -> dict[str, np.ndarray]:
        out = state_to_numpy(self.fps, "fps") | state_to_numpy(self.dps, "dps")
        if self.snippet_net is not None:
            out |= state_to_numpy(self.snippet_net, "snippet")
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        try:
            load_numpy_state(self.fps, tensors, "fps")
            load_numpy_state(self.dps, tensors, "dps")
            if self.snippet_net is not None:
                load_numpy_state(self.snippet_net, tensors, "snippet")
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"checkpoint incompatible with model: {exc}") from exc

    def architecture(self) -> dict:
        c = self.cfg
        return {"snippet_net": c.snippet_net, "snippet_channels": c.snippet_channels,
                "frame_channels": c.frame_channels, "refined_channels": self.refined_channels,
                "width": c.width, "depth": c.depth, "pool_size": c.pool_size, "mlp_expansion": c.mlp_expansion,
                "dps_fusion": c.dps_fusion, "T": c.T, "N": c.N}


def derive_seeds(seed: int) -> dict[str, np.random.SeedSequence]:
    """One run seed, three independent streams: init, sampling, data."""
    init, sampling, data = np.random.SeedSequence(seed).spawn(3)
    return {"init": init, "sampling": sampling, "data": data}


def init_seeds(seed: int) -> tuple[int, int, int]:
    words = derive_seeds(seed)["init"].generate_state(3)
    return int(words[0]), int(words[1]), int(words[2])


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path: Path, model: FDPN, optimizer: torch.optim.Optimizer | None, step: int,
                    rng: np.random.Generator | None, cfg_hash: str) -> None:
    tensors = model.state()
    meta = {"version": CHECKPOINT_VERSION, "step": step, "config_hash": cfg_hash,
            "architecture": model.architecture(), "seed": model.cfg.seed}
    if optimizer is not None:
        opt_state = optimizer.state_dict()
        meta["optimizer"] = {"kind": model.cfg.optimizer, "param_groups": opt_state["param_groups"], "steps": {}}
        for idx, st in opt_state["state"].items():
            for key, value in st.items():
                if key == "step":
                    meta["optimizer"]["steps"][str(idx)] = float(value)
                elif isinstance(value, torch.Tensor):
                    tensors[f"opt.{idx}.{key}"] = value.detach().numpy().copy()
    if rng is not None:
        meta["sampler_state"] = rng.bit_generator.state
    save_container(path, tensors, meta)


def load_checkpoint(path: Path, cfg: RunConfig) -> tuple[FDPN, dict, dict[str, np.ndarray]]:
    if not Path(path).exists():
        raise CheckpointError(f"no checkpoint at {path}")
    tensors, meta = load_container(path)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    arch = meta["architecture"]
    model = FDPN(cfg, init_seeds(cfg.seed), refined_channels=arch["refined_channels"])
    if model.architecture() != arch:
        raise CheckpointError(f"checkpoint architecture {arch} does not match config {model.architecture()}")
    model.load_state(tensors)
    return model, meta, tensors


def make_optimizer(cfg: RunConfig, params) -> torch.optim.Optimizer:
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.lr, momentum=0.9)
    return torch.optim.Adam(params, lr=cfg.lr)


def restore_optimizer(optimizer: torch.optim.Optimizer, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    saved = meta["optimizer"]
    state = {}
    for key, arr in tensors.items():
        if key.startswith("opt."):
            _, idx, name = key.split(".", 2)
            state.setdefault(int(idx), {})[name] = torch.from_numpy(np.array(arr))
    for idx, step in saved["steps"].items():
        state.setdefault(int(idx), {})["step"] = torch.tensor(step, dtype=torch.float32)
    optimizer.load_state_dict({"state": state, "param_groups": saved["param_groups"]})


# --------------------------------------------------------------------------- training


@dataclass
class RunArtifacts:
    run_dir: Path
    config_path: Path
    checkpoint: Path
    loss_log: Path
    steps: int
    losses: list[dict] = field(default_factory=list)


def _check_training_set(dataset: Dataset) -> tuple[list[VideoSample], list[VideoSample]]:
    train = dataset.split("train")
    pos = [s for s in train if s.is_abnormal]
    neg = [s for s in train if not s.is_abnormal]
    if not pos or not neg:
        raise ValidationError("training needs at least one abnormal and one normal training video")
    return pos, neg


def _pick_chunk(v: VideoFeatures, T: int, rng: np.random.Generator) -> slice:
    chunks = len(v.snippet) // T
    c = int(rng.integers(chunks)) if chunks > 1 else 0
    return slice(c * T, (c + 1) * T)


def _batch(videos: list[VideoFeatures], idx: np.ndarray, cfg: RunConfig, rng: np.random.Generator,
           abnormal: bool) -> dict[str, torch.Tensor]:
    parts = {k: [] for k in ("frame", "snippet", "refined", "sal", "valid", "labels")}
    for i in idx:
        v = videos[i]
        sl = _pick_chunk(v, cfg.T, rng)
        parts["frame"].append(v.frame[sl])
        parts["snippet"].append(v.snippet[sl])
        parts["refined"].append(v.refined[sl])
        parts["sal"].append(v.saliency3[sl])
        parts["valid"].append(v.valid[sl])
        parts["labels"].append(pseudo_labels_for(torch.from_numpy(v.snippet_scores[sl]), cfg.N, abnormal).numpy())
    batch = {k: torch.from_numpy(np.stack(p)) for k, p in parts.items()}
    if abnormal:
        batch["direction"] = torch.tensor([videos[i].sample.direction_index for i in idx])
    return batch


def _masked_for_ranking(scores: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    flat, mask = scores.reshape(scores.shape[0], -1), valid.reshape(valid.shape[0], -1)
    if bool(torch.all(mask > 0)):
        return flat
    return torch.where(mask > 0, flat, torch.full_like(flat, -math.inf))


def _smoothness_valid(scores: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    s, m = scores.reshape(scores.shape[0], -1), valid.reshape(valid.shape[0], -1)
    if bool(torch.all(m > 0)):
        return smoothness_loss(s)
    diff = (s[:, 1:] - s[:, :-1]) ** 2 * m[:, 1:]
    return (diff.sum(dim=-1) / m.sum(dim=-1)).mean()


def compute_losses(model: FDPN, pos: dict, neg: dict, cfg: RunConfig) -> dict[str, torch.Tensor]:
    if cfg.joint_training and model.snippet_net is not None:
        # refined features must carry gradients back into the snippet scorer
        pos = {**pos, "refined": model.snippet_net(pos["snippet"])[0]}
        neg = {**neg, "refined": model.snippet_net(neg["snippet"])[0]}
    s_pos = model.fps(fuse_features(pos["frame"], pos["refined"]))
    s_neg = model.fps(fuse_features(neg["frame"], neg["refined"]))
    scores = torch.cat([s_pos, s_neg])
    labels = torch.cat([pos["labels"], neg["labels"]])
    weights = torch.cat([pos["valid"], neg["valid"]])
    probs = model.dps(direction_features(pos["frame"], pos["snippet"]), pos["sal"], cfg.dps_mode,
                      direction_weights(s_pos.detach(), pos["valid"], cfg))
    onehot = torch.nn.functional.one_hot(pos["direction"], 3)
    return {
        "L_BF": binary_focal_loss(labels, scores, cfg.gamma, cfg.eps, weights),
        "L_FR": frame_ranking_loss(_masked_for_ranking(s_pos, pos["valid"]), _masked_for_ranking(s_neg, neg["valid"]),
                                   cfg.R, cfg.hinged_ranking),
        "L_smooth": _smoothness_valid(s_pos, pos["valid"]),
        "L_DF": direction_focal_loss(onehot, probs, cfg.gamma, cfg.eps),
    }


def direction_weights(frame_scores: torch.Tensor, valid: torch.Tensor, cfg: RunConfig) -> torch.Tensor:
    """Temporal pooling weights for the direction head: validity, optionally times anomaly score."""
    if cfg.dps_pooling == "mean":
        return valid
    return valid * frame_scores.clamp_min(1e-6)


def steps_per_epoch(n_pos: int, n_neg: int, B: int) -> int:
    return max(1, math.ceil(max(n_pos, n_neg) / B))


def _write_config_snapshot(run_dir: Path, cfg: RunConfig) -> Path:
    path = run_dir / "config.txt"
    text = cfg.to_text()
    if path.exists():
        if path.read_text() != text:
            raise ValidationError(f"{path} exists with a different configuration; use a fresh run directory")
    else:
        path.write_text(text)
    return path


def _read_loss_log(path: Path, upto: int) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh) if int(r["step"]) <= upto]


def train(cfg: RunConfig, dataset: Dataset, run_dir: str | Path, resume: bool = False,
          stop_after: int | None = None, videos: list[VideoFeatures] | None = None) -> RunArtifacts:
    """Two-stage training. stop_after halts (with a checkpoint) after that many steps."""
    cfg.validate()
    pos_samples, neg_samples = _check_training_set(dataset)
    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    config_path = _write_config_snapshot(run_dir, cfg)
    latest = ckpt_dir / "latest.fdpc"
    log_path = run_dir / "loss_log.csv"
    torch.manual_seed(cfg.seed)

    if videos is None:
        videos = prepare_dataset(dataset, cfg, "train")
    pos = [v for v in videos if v.sample.is_abnormal]
    neg = [v for v in videos if not v.sample.is_abnormal]
    seeds = derive_seeds(cfg.seed)
    sampler = np.random.default_rng(seeds["sampling"])

    start_step = 0
    if resume and latest.exists():
        model, meta, tensors = load_checkpoint(latest, cfg)
        if meta["config_hash"] != cfg.hash():
            raise CheckpointError("checkpoint was written under a different configuration")
        start_step = int(meta["step"])
        optimizer = make_optimizer(cfg, model.parameters())
        if "optimizer" in meta:
            restore_optimizer(optimizer, meta, tensors)
        sampler.bit_generator.state = meta["sampler_state"]
    else:
        model = FDPN(cfg, init_seeds(cfg.seed),
                     refined_channels=None if cfg.snippet_net == "toy" else _refined_width(cfg, videos[0]))
        if model.snippet_net is not None:
            train_snippet_scorer(model.snippet_net, [v.snippet[:cfg.T] for v in pos],
                                 [v.snippet[:cfg.T] for v in neg], cfg.snippet_steps, cfg.B, cfg.snippet_lr, sampler)
        optimizer = make_optimizer(cfg, model.parameters())
    model.attach_snippet_outputs(videos)

    rows = _read_loss_log(log_path, start_step) if start_step else []
    total_steps = cfg.epochs * steps_per_epoch(len(pos), len(neg), cfg.B)
    end_step = total_steps if stop_after is None else min(total_steps, stop_after)
    if start_step == 0:
        save_checkpoint(latest, model, optimizer, 0, sampler, cfg.hash())

    step = start_step
    try:
        for step in range(start_step + 1, end_step + 1):
            pi = sampler.integers(len(pos), size=cfg.B)
            ni = sampler.integers(len(neg), size=cfg.B)
            if cfg.joint_training:
                model.attach_snippet_outputs(videos)
            comps = compute_losses(model, _batch(pos, pi, cfg, sampler, True), _batch(neg, ni, cfg, sampler, False), cfg)
            loss = total_loss(comps, cfg.loss_config())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if not all(bool(torch.isfinite(p).all()) for p in model.parameters()):
                raise TrainingError(f"parameters became non-finite at step {step}")
            row = {"step": str(step), **{k: repr(float(comps[k].detach())) for k in LOSS_NAMES},
                   "total": repr(float(loss.detach()))}
            rows.append(row)
            if step % cfg.checkpoint_every == 0 or step == end_step:
                save_checkpoint(latest, model, optimizer, step, sampler, cfg.hash())
    except TrainingError:
        _write_loss_log(log_path, rows)
        log.error("training aborted at step %d; last good checkpoint kept at %s", step, latest)
        raise
    _write_loss_log(log_path, rows)
    return RunArtifacts(run_dir, config_path, latest, log_path, end_step, rows)


def _refined_width(cfg: RunConfig, v: VideoFeatures) -> int:
    return load_features(feature_path(cfg.feature_dir, v.sample.video_id, "snippet_refined")).shape[-1]


def _write_loss_log(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, LOSS_LOG_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


# --------------------------------------------------------------------------- inference


@dataclass
class VideoPrediction:
    video_id: str
    frame_scores: np.ndarray  # (frame_count,)
    snippet_broadcast: np.ndarray  # (frame_count,) snippet scores repeated over their frames
    direction: np.ndarray  # (3,)


def infer_video(model: FDPN, v: VideoFeatures, mode: str | None = None) -> VideoPrediction:
    cfg = model.cfg
    mode = mode or cfg.dps_mode
    if v.refined is None:
        model.attach_snippet_outputs([v])
    chunks = len(v.snippet) // cfg.T
    shape = (chunks, cfg.T)
    frame = torch.from_numpy(v.frame).reshape(*shape, cfg.N, -1)
    refined = torch.from_numpy(v.refined).reshape(*shape, -1)
    snippet = torch.from_numpy(v.snippet).reshape(*shape, -1)
    saliency3 = torch.from_numpy(v.saliency3).reshape(*shape, cfg.N, 3)
    valid = torch.from_numpy(v.valid).reshape(*shape, cfg.N)
    with torch.no_grad():
        scores = model.fps(fuse_features(frame, refined)).reshape(-1)
        f_dir = direction_features(frame, snippet).reshape(1, chunks * cfg.T, cfg.N, -1)
        weights = direction_weights(scores.reshape(1, -1, cfg.N), valid.reshape(1, -1, cfg.N), cfg)
        direction = model.dps(f_dir, saliency3.reshape(1, -1, cfg.N, 3), mode, weights)[0]
    n = v.sample.frame_count
    broadcast = np.repeat(v.snippet_scores, cfg.N)[:n]
    return VideoPrediction(v.sample.video_id, scores.numpy()[:n].astype(np.float64), broadcast.astype(np.float64),
                           direction.numpy().astype(np.float64))


def evaluate_model(model: FDPN, videos: list[VideoFeatures], mode: str | None = None,
                   config_hash: str = "") -> tuple[EvalReport, EvalReport]:
    """Reports for the frame predictor and for the snippet-broadcast baseline."""
    preds = [infer_video(model, v, mode) for v in videos]
    labels = {v.sample.video_id: expand_ground_truth(v.sample).labels for v in videos}
    truths = {v.sample.video_id: v.sample.direction for v in videos if v.sample.is_abnormal}
    directions = {p.video_id: p.direction for p in preds}
    frame_report = build_report({p.video_id: p.frame_scores for p in preds}, labels, directions, truths, config_hash)
    baseline = build_report({p.video_id: p.snippet_broadcast for p in preds}, labels, config_hash=config_hash)
    return frame_report, baseline


def evaluate(checkpoint: str | Path, dataset: Dataset, cfg: RunConfig, out_dir: str | Path | None = None,
             mode: str | None = None) -> tuple[EvalReport, EvalReport]:
    model, meta, _ = load_checkpoint(Path(checkpoint), cfg)
    videos = prepare_dataset(dataset, cfg, "test")
    frame_report, baseline = evaluate_model(model, videos, mode, meta.get("config_hash", cfg.hash()))
    if out_dir is not None:
        write_report(frame_report, Path(out_dir) / "eval")
        write_report(baseline, Path(out_dir) / "eval_snippet")
    return frame_report, baseline


def predict(checkpoint: str | Path, frames: np.ndarray, cfg: RunConfig, video_id: str = "video") -> VideoPrediction:
    model, _, _ = load_checkpoint(Path(checkpoint), cfg)
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 3:
        raise ShapeError(f"expected (F, H, W) frames, got {frames.shape}")
    sample = VideoSample(video_id, "test", "normal", None, len(frames))
    v = prepare_video(sample, frames, cfg)
    return infer_video(model, v)


def run_config(run_dir: str | Path) -> RunConfig:
    return load_config(Path(run_dir) / "config.txt")
