"""Training objectives: binary focal, frame ranking, smoothness and direction focal losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import torch

from .errors import TrainingError, ValidationError

LOSS_NAMES = ("L_BF", "L_FR", "L_smooth", "L_DF")


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    lambda1: float = 1.0
    lambda2: float = 1.6e-3
    lambda3: float = 0.3
    R: int = 48
    eps: float = 1e-7
    hinged_ranking: bool = False

    def __post_init__(self):
        if self.gamma < 0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")
        if self.R < 1:
            raise ValidationError(f"R must be >= 1, got {self.R}")
        if not 0 < self.eps <= 1e-3:
            raise ValidationError(f"eps must lie in (0, 1e-3], got {self.eps}")


def binary_focal_loss(labels: torch.Tensor, scores: torch.Tensor, gamma: float = 2.0,
                      eps: float = 1e-7, weights: torch.Tensor | None = None) -> torch.Tensor:
    """Mean focal loss between binary pseudo labels and scores in [0, 1].

    weights (same shape, 0/1) excludes elements such as padded frames from the mean.
    """
    if labels.shape != scores.shape:
        raise ValueError(f"label shape {tuple(labels.shape)} != score shape {tuple(scores.shape)}")
    s = scores.clamp(eps, 1.0 - eps)
    p = labels.to(s.dtype)
    loss = -p * (1.0 - s).pow(gamma) * torch.log(s) - (1.0 - p) * s.pow(gamma) * torch.log(1.0 - s)
    if weights is None:
        return loss.mean()
    w = weights.to(s.dtype)
    return (loss * w).sum() / w.sum().clamp_min(1.0)


def frame_ranking_loss(pos_scores: torch.Tensor, neg_scores: torch.Tensor, R: int,
                       hinged: bool = False) -> torch.Tensor:
    """Pair the R highest positive-video scores with the R highest negative-video scores by rank.

    Inputs are (B, F) or (F,) with frames flattened; returns the mean over videos of
    (1/R) sum_r (1 - pos_r + neg_r). No hinge unless hinged=True.
    """
    pos = pos_scores.reshape(-1, pos_scores.shape[-1]) if pos_scores.dim() > 1 else pos_scores[None]
    neg = neg_scores.reshape(-1, neg_scores.shape[-1]) if neg_scores.dim() > 1 else neg_scores[None]
    if R > pos.shape[-1] or R > neg.shape[-1]:
        raise ValueError(f"R={R} exceeds frame count ({pos.shape[-1]} positive, {neg.shape[-1]} negative)")
    if pos.shape[0] != neg.shape[0]:
        raise ValueError("positive and negative batches must pair up")
    top_pos = torch.topk(pos, R, dim=-1, sorted=True).values
    top_neg = torch.topk(neg, R, dim=-1, sorted=True).values
    terms = 1.0 - top_pos + top_neg
    if hinged:
        terms = terms.clamp_min(0.0)
    return terms.mean(dim=-1).mean()


def smoothness_loss(scores: torch.Tensor) -> torch.Tensor:
    """(1/F) sum_{f>=1} (S_f - S_{f-1})^2 per video, averaged over videos. Zero when F < 2."""
    s = scores.reshape(-1, scores.shape[-1]) if scores.dim() > 1 else scores[None]
    frames = s.shape[-1]
    if frames < 2:
        return s.sum() * 0.0
    return ((s[:, 1:] - s[:, :-1]) ** 2).sum(dim=-1).div(frames).mean()


def direction_focal_loss(onehot: torch.Tensor, probs: torch.Tensor, gamma: float = 2.0,
                         eps: float = 1e-7) -> torch.Tensor:
    """-sum_k y_k (1 - p_k)^gamma log p_k, averaged over videos."""
    y = onehot.reshape(-1, onehot.shape[-1]).to(probs.dtype)
    p = probs.reshape(-1, probs.shape[-1]).clamp(eps, 1.0 - eps)
    if y.shape != p.shape:
        raise ValueError(f"one-hot shape {tuple(y.shape)} != probability shape {tuple(p.shape)}")
    is_binary = torch.all((y == 0) | (y == 1))
    if not bool(is_binary) or not bool(torch.all(y.sum(dim=-1) == 1)):
        raise ValueError("direction targets must be one-hot")
    return (-(y * (1.0 - p).pow(gamma) * torch.log(p)).sum(dim=-1)).mean()


def total_loss(components: Mapping[str, torch.Tensor | float], cfg: LossConfig) -> torch.Tensor | float:
    """L_BF + lambda1 L_FR + lambda2 L_smooth + lambda3 L_DF; aborts on a non-finite component."""
    for name in LOSS_NAMES:
        value = components[name]
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise TrainingError(f"loss component {name} is non-finite ({v})")
    return (components["L_BF"] + cfg.lambda1 * components["L_FR"]
            + cfg.lambda2 * components["L_smooth"] + cfg.lambda3 * components["L_DF"])
