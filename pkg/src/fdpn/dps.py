"""Direction Prediction Subnetwork and its saliency refinement."""

from __future__ import annotations

import torch
from torch import nn

from .fps import SequenceBackbone, fuse_features
from .nn_utils import seeded_uniform_init

MODES = ("network_only", "saliency_only", "combined")
FUSIONS = ("product", "mixture")
NUM_DIRECTIONS = 3


def direction_features(frame: torch.Tensor, snippet: torch.Tensor) -> torch.Tensor:
    """Frame features concatenated with the raw (unrefined) snippet features."""
    return fuse_features(frame, snippet)


def refine(net_probs: torch.Tensor, sal_probs: torch.Tensor, fusion: str = "product") -> torch.Tensor:
    """Combine per-frame network and saliency distributions over the three directions."""
    if fusion == "product":
        joint = net_probs * sal_probs
    elif fusion == "mixture":
        joint = net_probs + sal_probs
    else:
        raise ValueError(f"unknown fusion {fusion!r}")
    return joint / joint.sum(dim=-1, keepdim=True)


def pool_frames(probs: torch.Tensor, weights: torch.Tensor | None = None) -> torch.Tensor:
    """Weighted mean over the frame axes of (B, T, N, 3).

    weights (B, T, N) are non-negative; zero excludes a frame (padding). None means a plain mean.
    """
    flat = probs.reshape(probs.shape[0], -1, probs.shape[-1])
    if weights is None:
        return flat.mean(dim=1)
    w = weights.reshape(flat.shape[0], -1, 1).to(flat.dtype)
    return (flat * w).sum(dim=1) / w.sum(dim=1).clamp_min(1e-12)


class DirectionPredictor(nn.Module):
    """Per-frame 3-way logits from the same pooling backbone family as the frame predictor."""

    def __init__(self, in_channels: int, width: int = 32, depth: int = 2, pool_size: int = 5,
                 expansion: int = 2, seed: int = 0, fusion: str = "product"):
        super().__init__()
        if fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {fusion!r}")
        self.fusion = fusion
        self.backbone = SequenceBackbone(in_channels, width, depth, pool_size, expansion)
        self.head = nn.Linear(width, NUM_DIRECTIONS)
        seeded_uniform_init(self, torch.Generator().manual_seed(seed))
        with torch.no_grad():
            self.head.weight.zero_()

    def frame_logits(self, f_dir: torch.Tensor) -> torch.Tensor:
        B, T, N, C = f_dir.shape
        return self.head(self.backbone(f_dir.reshape(B, T * N, C))).reshape(B, T, N, NUM_DIRECTIONS)

    def forward(self, f_dir: torch.Tensor, saliency: torch.Tensor, mode: str = "combined",
                weights: torch.Tensor | None = None) -> torch.Tensor:
        """Video-level direction distribution (B, 3); saliency is per-frame (B, T, N, 3).

        weights (B, T, N) set each frame's share of the temporal pooling (see pool_frames).
        """
        if mode not in MODES:
            raise ValueError(f"unknown DPS mode {mode!r}; expected one of {MODES}")
        saliency = saliency.to(f_dir.dtype)
        if mode == "saliency_only":
            return pool_frames(saliency, weights)
        probs = torch.softmax(self.frame_logits(f_dir), dim=-1)
        if mode == "combined":
            probs = refine(probs, saliency, self.fusion)
        return pool_frames(probs, weights)


def predict_direction(model: DirectionPredictor, f_dir: torch.Tensor, saliency: torch.Tensor,
                      weights: torch.Tensor | None = None) -> torch.Tensor:
    with torch.no_grad():
        return model(f_dir, saliency, "combined", weights)


def ablate(model: DirectionPredictor, mode: str, f_dir: torch.Tensor, saliency: torch.Tensor,
           weights: torch.Tensor | None = None) -> torch.Tensor:
    with torch.no_grad():
        return model(f_dir, saliency, mode, weights)
