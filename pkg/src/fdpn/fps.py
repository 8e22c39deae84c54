"""Frame Prediction Subnetwork: pooling/convolution sequence model over the flattened frame axis."""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ShapeError
from .nn_utils import seeded_uniform_init


def fuse_features(frame: torch.Tensor, snippet: torch.Tensor) -> torch.Tensor:
    """Concatenate (B, T, N, C') frame features with (B, T, C'') snippet features broadcast over N."""
    if frame.dim() != 4 or snippet.dim() != 3 or frame.shape[:2] != snippet.shape[:2]:
        raise ShapeError(f"cannot fuse frame {tuple(frame.shape)} with snippet {tuple(snippet.shape)}")
    expanded = snippet.unsqueeze(2).expand(-1, -1, frame.shape[2], -1)
    return torch.cat([frame, expanded.to(frame.dtype)], dim=-1)


class PoolMixerBlock(nn.Module):
    """PoolFormer block on (B, L, D): average-pool token mixer then channel MLP, both residual."""

    def __init__(self, dim: int, pool_size: int = 5, expansion: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.pool = nn.AvgPool1d(pool_size, stride=1, padding=pool_size // 2, count_include_pad=False)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, dim * expansion)
        self.fc2 = nn.Linear(dim * expansion, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.norm1(x)
        x = x + self.pool(y.transpose(1, 2)).transpose(1, 2) - y
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class SequenceBackbone(nn.Module):
    """Input projection, pooling blocks, output norm and a kernel-3 1-D convolution."""

    def __init__(self, in_channels: int, width: int = 32, depth: int = 2, pool_size: int = 5,
                 expansion: int = 2, conv_kernel: int = 3):
        super().__init__()
        self.embed = nn.Linear(in_channels, width)
        self.blocks = nn.ModuleList(PoolMixerBlock(width, pool_size, expansion) for _ in range(depth))
        self.norm = nn.LayerNorm(width)
        self.conv = nn.Conv1d(width, width, conv_kernel, padding=conv_kernel // 2)
        self.receptive_radius = depth * (pool_size // 2) + conv_kernel // 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.embed(x)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return F.gelu(self.conv(x.transpose(1, 2)).transpose(1, 2))


class FramePredictor(nn.Module):
    """Maps fused features (B, T, N, C) to frame scores (B, T, N) in [0, 1]."""

    def __init__(self, in_channels: int, width: int = 32, depth: int = 2, pool_size: int = 5,
                 expansion: int = 2, seed: int = 0):
        super().__init__()
        self.backbone = SequenceBackbone(in_channels, width, depth, pool_size, expansion)
        self.head = nn.Linear(width, 1)
        seeded_uniform_init(self, torch.Generator().manual_seed(seed))
        with torch.no_grad():
            self.head.weight.zero_()

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        B, T, N, C = fused.shape
        h = self.backbone(fused.reshape(B, T * N, C))
        return torch.sigmoid(self.head(h)).reshape(B, T, N)


def predict_frames(fused: torch.Tensor, model: FramePredictor) -> torch.Tensor:
    with torch.no_grad():
        return model(fused)
