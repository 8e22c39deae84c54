"""Saliency heatmaps, grid importance scores, top-K masking and panorama-third direction cues."""

from __future__ import annotations

from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ShapeError
from .tensorio import load_tensor


class SaliencyModel(Protocol):
    def __call__(self, frames: np.ndarray) -> np.ndarray:
        """Map frames (F, H, W) to non-negative heatmaps of the same shape."""


class TemporalDifferenceSaliency:
    """|frame_t - frame_{t-1}| box-smoothed over a smoothing x smoothing window.

    The first frame has no predecessor and gets an all-zero heatmap, as does any frame
    identical to the one before it.
    """

    def __init__(self, smoothing: int = 3):
        self.smoothing = smoothing

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 3 or len(frames) == 0:
            raise ShapeError(f"expected frames of shape (F, H, W) with F >= 1, got {frames.shape}")
        diff = np.zeros_like(frames)
        diff[1:] = np.abs(frames[1:] - frames[:-1])
        if self.smoothing > 1:
            diff = uniform_filter(diff, size=(1, self.smoothing, self.smoothing), mode="nearest")
        return np.maximum(diff, 0.0, out=diff)


class PrecomputedSaliency:
    """Heatmaps read from an FDPN tensor file, e.g. exported from an external saliency model."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        heat = load_tensor(self.path).astype(np.float64)
        if heat.shape != np.shape(frames):
            raise ShapeError(f"heatmaps {heat.shape} do not match frames {np.shape(frames)}")
        if not np.all(np.isfinite(heat)) or heat.min() < 0:
            raise ValueError(f"{self.path}: heatmaps must be finite and non-negative")
        return heat


def compute_saliency(frames: np.ndarray, model: SaliencyModel | None = None) -> np.ndarray:
    return (model or TemporalDifferenceSaliency())(frames)


def cell_edges(size: int, n: int) -> np.ndarray:
    """Start offsets of n cells along an axis; the last cell absorbs the remainder."""
    if n <= 0:
        raise ValueError(f"grid size must be positive, got {n}")
    if size < n:
        raise ShapeError(f"axis of length {size} cannot be split into {n} cells")
    return np.arange(n) * (size // n)


def grid_scores(heatmap: np.ndarray, n: int) -> np.ndarray:
    """Sum saliency within each cell of an n x n grid. Works on (..., H, W)."""
    h = np.asarray(heatmap, dtype=np.float64)
    if h.ndim < 2:
        raise ShapeError(f"heatmap must be at least 2-D, got {h.shape}")
    rows = np.add.reduceat(h, cell_edges(h.shape[-2], n), axis=-2)
    return np.add.reduceat(rows, cell_edges(h.shape[-1], n), axis=-1)


def topk_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Binary n x n mask keeping the k highest-scoring cells; ties go to the lowest row-major index."""
    g = np.asarray(scores, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ShapeError(f"grid scores must be square, got {g.shape}")
    if not 1 <= k <= g.size:
        raise ValueError(f"k must lie in [1, {g.size}], got {k}")
    order = np.argsort(-g.ravel(), kind="stable")
    mask = np.zeros(g.size, dtype=np.uint8)
    mask[order[:k]] = 1
    return mask.reshape(g.shape)


def upsample_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    n_rows, n_cols = mask.shape
    row_cells = np.minimum(np.arange(height) // (height // n_rows), n_rows - 1)
    col_cells = np.minimum(np.arange(width) // (width // n_cols), n_cols - 1)
    return mask[np.ix_(row_cells, col_cells)]


def apply_mask(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero every pixel outside the kept cells. frame may carry leading batch axes."""
    frame = np.asarray(frame)
    mask = np.asarray(mask)
    if frame.ndim < 2 or mask.ndim != 2:
        raise ShapeError(f"cannot apply mask {mask.shape} to frame {frame.shape}")
    cell_edges(frame.shape[-2], mask.shape[0])
    cell_edges(frame.shape[-1], mask.shape[1])
    pixel_mask = upsample_mask(mask, frame.shape[-2], frame.shape[-1]).astype(frame.dtype)
    return frame * pixel_mask


def direction_saliency(heatmap: np.ndarray) -> np.ndarray:
    """Softmax over the saliency mass of the left, centre and right panorama thirds.

    Accepts (..., H, W) and returns (..., 3) ordered (left_back, center, right_back).
    """
    h = np.asarray(heatmap, dtype=np.float64)
    if h.ndim < 2:
        raise ShapeError(f"heatmap must be at least 2-D, got {h.shape}")
    sums = np.add.reduceat(h.sum(axis=-2), cell_edges(h.shape[-1], 3), axis=-1)
    return softmax(sums)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def mask_video(frames: np.ndarray, heatmaps: np.ndarray, n: int, k: int,
               granularity: str = "frame", frames_per_snippet: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Mask every frame of a video. Returns (masked frames, masks of shape (F, n, n)).

    With granularity="snippet" one mask, from the summed heatmaps of each group of
    frames_per_snippet frames, is shared by the whole group.
    """
    frames = np.asarray(frames)
    if frames.shape != np.shape(heatmaps):
        raise ShapeError(f"frames {frames.shape} and heatmaps {np.shape(heatmaps)} differ")
    scores = grid_scores(heatmaps, n)
    if granularity == "snippet":
        if len(frames) % frames_per_snippet:
            raise ShapeError("frame count must be a multiple of frames_per_snippet for snippet masks")
        grouped = scores.reshape(-1, frames_per_snippet, n, n).sum(axis=1)
        masks = np.repeat(np.stack([topk_mask(g, k) for g in grouped]), frames_per_snippet, axis=0)
    elif granularity == "frame":
        masks = np.stack([topk_mask(g, k) for g in scores])
    else:
        raise ValueError(f"unknown mask granularity {granularity!r}")
    height, width = frames.shape[-2:]
    rows = np.minimum(np.arange(height) // (height // n), n - 1)
    cols = np.minimum(np.arange(width) // (width // n), n - 1)
    pixel_masks = masks[:, rows][:, :, cols]
    return frames * pixel_masks.astype(frames.dtype), masks
