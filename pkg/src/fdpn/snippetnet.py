"""Snippet-level scoring and pseudo-label synthesis for coarse-to-fine training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .nn_utils import seeded_uniform_init

PSEUDO_LABEL_THRESHOLD = 0.5


@dataclass
class SnippetScores:
    positive: torch.Tensor  # (B, T), abnormal videos
    negative: torch.Tensor  # (B, T), normal videos


class SnippetScorer(nn.Module):
    """Two-layer perceptron; the hidden activation doubles as the refined snippet feature."""

    def __init__(self, in_channels: int, hidden: int = 32, seed: int = 0):
        super().__init__()
        self.hidden = nn.Linear(in_channels, hidden)
        self.out = nn.Linear(hidden, 1)
        seeded_uniform_init(self, torch.Generator().manual_seed(seed))

    @property
    def refined_channels(self) -> int:
        return self.hidden.out_features

    def forward(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        refined = torch.relu(self.hidden(features))
        scores = torch.sigmoid(self.out(refined)).squeeze(-1)
        return refined, scores


def score_snippets(model: nn.Module, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """(B, T, C) features -> refined (B, T, C'') and scores (B, T), without gradients."""
    with torch.no_grad():
        return model(features)


def mil_hinge_loss(pos_scores: torch.Tensor, neg_scores: torch.Tensor, margin: float = 1.0) -> torch.Tensor:
    """max(0, margin - max_t S+ + max_t S-), averaged over pairs."""
    gap = margin - pos_scores.max(dim=-1).values + neg_scores.max(dim=-1).values
    return gap.clamp_min(0.0).mean()


def make_pseudo_labels(scores: SnippetScores, N: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Binary (B, T, N) labels: positive snippets with score >= 0.5 become 1, negatives are all 0."""
    pos = (scores.positive >= PSEUDO_LABEL_THRESHOLD).to(torch.float32)
    pos = pos.unsqueeze(-1).expand(*pos.shape, N).contiguous()
    neg = torch.zeros(*scores.negative.shape, N, dtype=torch.float32)
    return pos, neg


def pseudo_labels_for(scores: torch.Tensor, N: int, abnormal: bool) -> torch.Tensor:
    """Labels for one group of videos, (..., T) -> (..., T, N)."""
    if not abnormal:
        return torch.zeros(*scores.shape, N, dtype=torch.float32)
    return (scores >= PSEUDO_LABEL_THRESHOLD).to(torch.float32).unsqueeze(-1).expand(*scores.shape, N).contiguous()


def train_snippet_scorer(model: SnippetScorer, pos_feats: list[np.ndarray], neg_feats: list[np.ndarray],
                         steps: int, batch_size: int, lr: float, rng: np.random.Generator) -> list[float]:
    """Fit the scorer with the MIL hinge on randomly drawn abnormal/normal pairs."""
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    history = []
    for _ in range(steps):
        pi = rng.integers(len(pos_feats), size=batch_size)
        ni = rng.integers(len(neg_feats), size=batch_size)
        pos = torch.from_numpy(np.stack([pos_feats[i] for i in pi]))
        neg = torch.from_numpy(np.stack([neg_feats[i] for i in ni]))
        _, s_pos = model(pos)
        _, s_neg = model(neg)
        loss = mil_hinge_loss(s_pos, s_neg)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))
    return history
