"""Frame-level AUC-ROC / AUC-PR, direction accuracy, duration-bucket comparisons and report I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datamodel import DIRECTIONS
from .errors import UndefinedMetricError

DEFAULT_THRESHOLDS = (0.6, 0.7, 0.8, 0.9)
DEFAULT_BUCKET_EDGES = (0.0, 3.0, 6.0, math.inf)


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if y.all() or not y.any():
        raise UndefinedMetricError("both positive and negative labels are required")
    return s, y


def _threshold_counts(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative true/false positives at each distinct score, highest threshold first."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last_of_run]
    fps = (last_of_run + 1) - tps
    return tps.astype(np.float64), fps.astype(np.float64)


def auc_roc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve (ties between scores contribute one half)."""
    s, y = _check_binary(scores, labels)
    tps, fps = _threshold_counts(s, y)
    tpr = np.r_[0.0, tps / tps[-1]]
    fpr = np.r_[0.0, fps / fps[-1]]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_pr(scores, labels) -> float:
    """Step-interpolated area under precision-recall: sum over thresholds of delta-recall * precision."""
    s, y = _check_binary(scores, labels)
    tps, fps = _threshold_counts(s, y)
    precision = tps / (tps + fps)
    recall = tps / tps[-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def count_argmax_ties(predictions) -> int:
    p = np.asarray(predictions, dtype=np.float64)
    return int(np.sum((p == p.max(axis=-1, keepdims=True)).sum(axis=-1) > 1))


def direction_accuracy(predictions, truths) -> float:
    """Fraction of videos whose argmax direction matches; argmax ties resolve to the lower index."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1, len(DIRECTIONS))
    t = np.asarray([DIRECTIONS.index(x) if isinstance(x, str) else int(x) for x in truths])
    if len(p) == 0:
        raise UndefinedMetricError("no abnormal videos to score direction on")
    if len(p) != len(t):
        raise ValueError("predictions and truths differ in length")
    return float(np.mean(np.argmax(p, axis=-1) == t))


@dataclass
class EvalReport:
    auc_roc: float
    auc_pr: float
    direction_accuracy: float | None = None
    direction_ties: int = 0
    per_video_scores: dict[str, np.ndarray] = field(default_factory=dict)
    per_video_labels: dict[str, np.ndarray] = field(default_factory=dict)
    direction_predictions: dict[str, np.ndarray] = field(default_factory=dict)
    direction_truths: dict[str, str] = field(default_factory=dict)
    duration_buckets: dict = field(default_factory=dict)
    config_hash: str = ""

    def summary_rows(self) -> list[tuple[str, str]]:
        rows = [("auc_roc", repr(self.auc_roc)), ("auc_pr", repr(self.auc_pr))]
        if self.direction_accuracy is not None:
            rows += [("direction_accuracy", repr(self.direction_accuracy)),
                     ("direction_ties", str(self.direction_ties))]
        rows += [("num_videos", str(len(self.per_video_scores))), ("config_hash", self.config_hash)]
        return rows


def build_report(scores: Mapping[str, np.ndarray], labels: Mapping[str, np.ndarray],
                 directions: Mapping[str, np.ndarray] | None = None,
                 direction_truths: Mapping[str, str] | None = None, config_hash: str = "") -> EvalReport:
    """Concatenate per-video frame scores (padding already removed) and compute every metric."""
    ids = list(scores)
    all_scores = np.concatenate([np.asarray(scores[v], dtype=np.float64) for v in ids])
    all_labels = np.concatenate([np.asarray(labels[v]) for v in ids])
    report = EvalReport(
        auc_roc=auc_roc(all_scores, all_labels),
        auc_pr=auc_pr(all_scores, all_labels),
        per_video_scores={v: np.asarray(scores[v]) for v in ids},
        per_video_labels={v: np.asarray(labels[v]) for v in ids},
        config_hash=config_hash,
    )
    if directions and direction_truths:
        judged = [v for v in ids if v in direction_truths and v in directions]
        if judged:
            preds = np.stack([directions[v] for v in judged])
            report.direction_accuracy = direction_accuracy(preds, [direction_truths[v] for v in judged])
            report.direction_ties = count_argmax_ties(preds)
        report.direction_predictions = {v: np.asarray(directions[v]) for v in directions}
        report.direction_truths = dict(direction_truths)
    return report


def anomaly_durations(report: EvalReport) -> dict[str, int]:
    """Anomalous-frame count of each abnormal video."""
    return {v: int(np.sum(l)) for v, l in report.per_video_labels.items() if np.any(l)}


def duration_bucket_improvement(candidate: EvalReport, baseline: EvalReport,
                                bucket_edges: Sequence[float] = DEFAULT_BUCKET_EDGES,
                                thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                                fps_nominal: float = 30.0) -> dict[tuple[float, float], dict[float, float]]:
    """Per duration bucket and threshold, thresholded frame accuracy of candidate minus baseline.

    Durations are anomalous-frame counts divided by fps_nominal (pass fps_nominal=1 to bucket
    in frames). Buckets are half-open [lo, hi); buckets with no videos are left out.
    """
    if set(candidate.per_video_scores) != set(baseline.per_video_scores):
        raise ValueError("reports cover different test videos")
    durations = anomaly_durations(candidate)
    out = {}
    for lo, hi in zip(bucket_edges[:-1], bucket_edges[1:]):
        members = [v for v, d in durations.items() if lo <= d / fps_nominal < hi]
        if not members:
            continue
        labels = np.concatenate([candidate.per_video_labels[v] for v in members]).astype(bool)
        cand = np.concatenate([candidate.per_video_scores[v] for v in members])
        base = np.concatenate([baseline.per_video_scores[v] for v in members])
        out[(lo, hi)] = {
            float(t): float(np.mean((cand >= t) == labels) - np.mean((base >= t) == labels))
            for t in thresholds
        }
    return out


def bucket_accuracy(report: EvalReport, bucket_edges=DEFAULT_BUCKET_EDGES, thresholds=DEFAULT_THRESHOLDS,
                    fps_nominal: float = 30.0) -> dict:
    durations = anomaly_durations(report)
    out = {}
    for lo, hi in zip(bucket_edges[:-1], bucket_edges[1:]):
        members = [v for v, d in durations.items() if lo <= d / fps_nominal < hi]
        if members:
            labels = np.concatenate([report.per_video_labels[v] for v in members]).astype(bool)
            scores = np.concatenate([report.per_video_scores[v] for v in members])
            out[(lo, hi)] = {float(t): float(np.mean((scores >= t) == labels)) for t in thresholds}
    return out


# --------------------------------------------------------------------------- serialisation


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerows(report.summary_rows())
    with_dir = bool(report.direction_predictions)
    with open(out / "scores.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["video_id", "frame", "score", "label"]
        if with_dir:
            header += ["dir_pred", "dir_true"]
        writer.writerow(header)
        for vid, scores in report.per_video_scores.items():
            labels = report.per_video_labels[vid]
            extra = []
            if with_dir:
                pred = report.direction_predictions.get(vid)
                extra = [DIRECTIONS[int(np.argmax(pred))] if pred is not None else "",
                         report.direction_truths.get(vid, "")]
            for f, (s, l) in enumerate(zip(scores, labels)):
                writer.writerow([vid, f, repr(float(s)), int(l), *extra])


def read_report(out_dir: str | Path) -> EvalReport:
    out = Path(out_dir)
    with open(out / "summary.csv", newline="") as fh:
        summary = {r["metric"]: r["value"] for r in csv.DictReader(fh)}
    scores: dict[str, list] = {}
    labels: dict[str, list] = {}
    truths = {}
    with open(out / "scores.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            scores.setdefault(r["video_id"], []).append(float(r["score"]))
            labels.setdefault(r["video_id"], []).append(int(r["label"]))
            if r.get("dir_true"):
                truths[r["video_id"]] = r["dir_true"]
    acc = summary.get("direction_accuracy")
    return EvalReport(
        auc_roc=float(summary["auc_roc"]),
        auc_pr=float(summary["auc_pr"]),
        direction_accuracy=float(acc) if acc else None,
        direction_ties=int(summary.get("direction_ties", 0)),
        per_video_scores={v: np.asarray(s) for v, s in scores.items()},
        per_video_labels={v: np.asarray(l, dtype=np.int8) for v, l in labels.items()},
        direction_truths=truths,
        config_hash=summary.get("config_hash", ""),
    )
