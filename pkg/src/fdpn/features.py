"""Snippet- and frame-level feature extraction plus the on-disk feature store.

The toy extractors summarise each block of a small spatial pyramid (whole frame, the three
panorama thirds, a rows x cols grid) by its mean, variance and maximum, then project the
statistics to the requested width with a fixed random matrix drawn from the extractor seed. They stand in for pretrained video/image backbones;
real backbone outputs can be dropped in through the precomputed kind.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ShapeError, ValidationError
from .saliency import cell_edges
from .tensorio import load_tensor, save_tensor

KINDS = ("toy_snippet", "toy_frame", "precomputed")
NUM_STATS = 3


@dataclass(frozen=True)
class ExtractorSpec:
    kind: str
    channels: int
    seed: int = 0
    pool_rows: int = 3
    pool_cols: int = 6
    feature_dir: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown extractor kind {self.kind!r}")
        if self.channels <= 0:
            raise ValidationError(f"channels must be positive, got {self.channels}")
        if self.kind == "precomputed" and not self.feature_dir:
            raise ValidationError("precomputed extractor needs feature_dir")


@lru_cache(maxsize=32)
def _projection(seed: int, in_dim: int, out_dim: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim)


def block_statistics(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Mean, variance and max of each pooling block.

    x has shape (G, K, H, W): G groups of K images pooled together (K=1 for per-frame
    statistics, K=N for per-snippet). Returns (G, 3 * rows * cols).
    """
    x = np.asarray(x, dtype=np.float64)
    r_edges = cell_edges(x.shape[-2], rows)
    c_edges = cell_edges(x.shape[-1], cols)
    r_sizes = np.diff(np.append(r_edges, x.shape[-2]))
    c_sizes = np.diff(np.append(c_edges, x.shape[-1]))
    counts = x.shape[1] * np.outer(r_sizes, c_sizes)

    def pooled(a, ufunc):
        a = ufunc.reduceat(a, r_edges, axis=-2)
        a = ufunc.reduceat(a, c_edges, axis=-1)
        return ufunc.reduce(a, axis=1)

    mean = pooled(x, np.add) / counts
    var = np.maximum(pooled(x * x, np.add) / counts - mean**2, 0.0)
    peak = pooled(x, np.maximum)
    return np.stack([mean, var, peak], axis=1).reshape(len(x), -1)


def pyramid_statistics(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    levels = ((1, 1), (1, 3), (rows, cols))
    return np.concatenate([block_statistics(x, r, c) for r, c in levels], axis=-1)


def _project(stats: np.ndarray, spec: ExtractorSpec) -> np.ndarray:
    proj = _projection(spec.seed, stats.shape[-1], spec.channels)
    return (stats @ proj).astype(np.float32)


def extract_snippet_features(frames: np.ndarray, T: int, N: int, spec: ExtractorSpec,
                             video_id: str | None = None) -> np.ndarray:
    """Return (S, C) snippet features with S = len(frames) / N, a multiple of T."""
    frames = np.asarray(frames)
    if frames.ndim != 3 or len(frames) == 0:
        raise ValueError(f"expected a non-empty (F, H, W) video, got shape {frames.shape}")
    if len(frames) % (T * N):
        raise ShapeError(f"frame count {len(frames)} is not a multiple of T*N={T * N}; pad first")
    if spec.kind == "precomputed":
        feats = load_features(feature_path(spec.feature_dir, video_id, "snippet"))
        if feats.shape[0] != len(frames) // N:
            raise ShapeError(f"{video_id}: precomputed snippet features have {feats.shape[0]} rows")
        return feats
    snippets = frames.reshape(-1, N, *frames.shape[1:])
    return _project(pyramid_statistics(snippets, spec.pool_rows, spec.pool_cols), spec)


def extract_frame_features(frames: np.ndarray, spec: ExtractorSpec, video_id: str | None = None) -> np.ndarray:
    """Return (F, C') per-frame features of (usually masked) frames."""
    frames = np.asarray(frames)
    if frames.ndim != 3 or len(frames) == 0:
        raise ValueError(f"expected a non-empty (F, H, W) video, got shape {frames.shape}")
    if spec.kind == "precomputed":
        feats = load_features(feature_path(spec.feature_dir, video_id, "frame"))
        if feats.shape[0] != len(frames):
            raise ShapeError(f"{video_id}: precomputed frame features have {feats.shape[0]} rows")
        return feats
    return _project(pyramid_statistics(frames[:, None], spec.pool_rows, spec.pool_cols), spec)


def feature_path(directory: str | Path, video_id: str, kind: str) -> Path:
    return Path(directory) / f"{video_id}.{kind}.fdpn"


def store_features(path: str | Path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        raise ValueError("refusing to store non-finite features")
    save_tensor(path, values)


def load_features(path: str | Path) -> np.ndarray:
    return load_tensor(path)
