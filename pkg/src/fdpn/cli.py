"""Command line entry point: ``fdpn <subcommand> [options] [--config-key value ...]``.

Any RunConfig field can be overridden as ``--key value`` (dashes or underscores). Exit codes:
0 success, 2 validation error, 3 runtime or training error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from . import saliency as sal
from .config import RunConfig, load_config
from .datamodel import DIRECTIONS, Dataset, SyntheticSpec, generate_synthetic, pad_frames
from .dps import MODES
from .errors import CheckpointError, ShapeError, TrainingError, UndefinedMetricError, ValidationError
from .evalmetrics import duration_bucket_improvement, read_report
from .features import feature_path, store_features
from .tensorio import FormatError, load_tensor, save_tensor

log = logging.getLogger("fdpn")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def _overrides(extra: list[str]) -> dict[str, str]:
    """Turn leftover ``--key value`` / ``--key=value`` tokens into config overrides."""
    out, i = {}, 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or len(token) == 2:
            raise ValidationError(f"unexpected argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise ValidationError(f"option {token} needs a value")
        out[key.replace("-", "_")] = value
    return out


def _resolve_config(args, extra: list[str]) -> RunConfig:
    overrides = _overrides(extra)
    for name in ("seed", "snippet_net", "grid_n", "top_k", "saliency"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    path = args.config
    run_dir = getattr(args, "run_dir", None)
    if path is None and run_dir is not None and (Path(run_dir) / "config.txt").exists() and args.command != "train":
        path = Path(run_dir) / "config.txt"
    return load_config(path, overrides).validate()


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--snippet-net", dest="snippet_net", choices=("toy", "precomputed"))
    p.add_argument("--grid-n", dest="grid_n", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--saliency", choices=("tempdiff", "file"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdpn", description="Frame/direction anomaly scoring toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic panoramic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-videos", type=int, default=SyntheticSpec.num_videos)
    p.add_argument("--num-test", type=int, default=SyntheticSpec.num_test)
    p.add_argument("--frame-count", type=int, default=SyntheticSpec.frame_count)
    p.add_argument("--min-duration", type=int, default=SyntheticSpec.anomaly_duration_range[0])
    p.add_argument("--max-duration", type=int, default=SyntheticSpec.anomaly_duration_range[1])
    p.add_argument("--no-direction-signal", action="store_true")

    p = sub.add_parser("mask", help="write saliency heatmaps, grid masks and masked frames")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("extract", help="write snippet and frame features in the precomputed layout")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train the frame and direction predictors")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--run-dir", dest="run_dir", type=Path, required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--stop-after", type=int, help="halt after this many steps (checkpointed)")

    p = sub.add_parser("eval", help="score the test split and write reports")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--run-dir", dest="run_dir", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--dps-mode", dest="dps_mode", choices=MODES)

    p = sub.add_parser("predict", help="score one video file")
    _add_common(p)
    p.add_argument("--run-dir", dest="run_dir", type=Path, required=True)
    p.add_argument("--video", type=Path, required=True, help="FDPN tensor of shape (F, H, W)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--dps-mode", dest="dps_mode", choices=MODES)

    p = sub.add_parser("report", help="per-duration accuracy of frame scores against the snippet baseline")
    _add_common(p)
    p.add_argument("--run-dir", dest="run_dir", type=Path, required=True)
    p.add_argument("--bucket-edges", default="0,3,6,inf", help="comma-separated, in seconds")
    p.add_argument("--thresholds", default="0.6,0.7,0.8,0.9")
    return parser


def cmd_synth(args, extra) -> int:
    if extra:
        raise ValidationError(f"unexpected arguments {extra}")
    spec = SyntheticSpec(num_videos=args.num_videos, frame_count=args.frame_count,
                         anomaly_duration_range=(args.min_duration, args.max_duration),
                         direction_signal=not args.no_direction_signal, seed=args.seed, num_test=args.num_test)
    generate_synthetic(spec, args.out)
    print(f"wrote {spec.num_videos} videos to {args.out}")
    return EXIT_OK


def cmd_mask(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    ds = Dataset.open(args.dataset)
    args.out.mkdir(parents=True, exist_ok=True)
    for s in ds.samples:
        frames = ds.frames(s.video_id)
        heat = pipeline.saliency_model(cfg, s.video_id)(frames)
        padded, heat_p = pad_frames(frames, cfg.T, cfg.N), pad_frames(heat, cfg.T, cfg.N)
        masked, masks = sal.mask_video(padded, heat_p, cfg.grid_n, cfg.top_k, cfg.mask_granularity, cfg.N)
        save_tensor(feature_path(args.out, s.video_id, "saliency"), heat)
        save_tensor(feature_path(args.out, s.video_id, "mask"), masks.astype(np.float32))
        save_tensor(feature_path(args.out, s.video_id, "masked"), masked)
    print(f"masked {len(ds.samples)} videos into {args.out}")
    return EXIT_OK


def cmd_extract(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    ds = Dataset.open(args.dataset)
    args.out.mkdir(parents=True, exist_ok=True)
    for s in ds.samples:
        v = pipeline.prepare_video(s, ds.frames(s.video_id), cfg)
        store_features(feature_path(args.out, s.video_id, "snippet"), v.snippet)
        store_features(feature_path(args.out, s.video_id, "frame"), v.frame.reshape(-1, v.frame.shape[-1]))
    print(f"extracted features for {len(ds.samples)} videos into {args.out}")
    return EXIT_OK


def cmd_train(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    artifacts = pipeline.train(cfg, Dataset.open(args.dataset), args.run_dir, resume=args.resume,
                               stop_after=args.stop_after)
    last = artifacts.losses[-1]["total"] if artifacts.losses else "n/a"
    print(f"trained to step {artifacts.steps}; final loss {last}; checkpoint {artifacts.checkpoint}")
    return EXIT_OK


def _checkpoint(args) -> Path:
    return args.checkpoint or Path(args.run_dir) / "checkpoints" / "latest.fdpc"


def cmd_eval(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    frame_report, baseline = pipeline.evaluate(_checkpoint(args), Dataset.open(args.dataset), cfg,
                                               args.run_dir, args.dps_mode)
    for name, value in frame_report.summary_rows():
        print(f"{name}: {value}")
    print(f"snippet_baseline_auc_roc: {baseline.auc_roc!r}")
    return EXIT_OK


def cmd_predict(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    if args.dps_mode:
        cfg = cfg.with_overrides({"dps_mode": args.dps_mode})
    try:
        frames = load_tensor(args.video)
    except FormatError as exc:
        raise OSError(f"cannot read {args.video}: {exc}") from exc
    pred = pipeline.predict(_checkpoint(args), frames, cfg, args.video.name.split(".")[0])
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "frame_scores.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "score"])
        writer.writerows((i, repr(float(s))) for i, s in enumerate(pred.frame_scores))
    with open(args.out / "direction.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DIRECTIONS)
        writer.writerow([repr(float(p)) for p in pred.direction])
    print(f"{len(pred.frame_scores)} frame scores; direction {DIRECTIONS[int(np.argmax(pred.direction))]}")
    return EXIT_OK


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(math.inf if t.strip() == "inf" else float(t) for t in text.split(","))
    except ValueError:
        raise ValidationError(f"cannot parse number list {text!r}") from None


def cmd_report(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    run = Path(args.run_dir)
    frame_report, baseline = read_report(run / "eval"), read_report(run / "eval_snippet")
    table = duration_bucket_improvement(frame_report, baseline, _floats(args.bucket_edges),
                                        _floats(args.thresholds), cfg.fps_nominal)
    path = run / "duration_buckets.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bucket_lo", "bucket_hi", "threshold", "accuracy_delta"])
        for (lo, hi), deltas in table.items():
            for thr, delta in deltas.items():
                writer.writerow([lo, hi, thr, repr(delta)])
                print(f"[{lo}, {hi}) s  thr {thr}: {delta:+.4f}")
    print(f"frame AUC-ROC {frame_report.auc_roc:.4f} vs snippet baseline {baseline.auc_roc:.4f}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "mask": cmd_mask, "extract": cmd_extract, "train": cmd_train,
            "eval": cmd_eval, "predict": cmd_predict, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, extra)
    except (ValidationError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CheckpointError, TrainingError, ShapeError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
