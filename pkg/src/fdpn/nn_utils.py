"""Small torch helpers: seeded initialisation and parameter (de)serialisation."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn


def seeded_uniform_init(module: nn.Module, generator: torch.Generator) -> None:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases, in a fixed parameter order."""
    for sub in module.modules():
        if isinstance(sub, (nn.Linear, nn.Conv1d)):
            w = sub.weight
            fan_in = w.shape[1] * (w.shape[2] if w.dim() == 3 else 1)
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                w.copy_(torch.rand(w.shape, generator=generator, dtype=w.dtype) * 2 * bound - bound)
                if sub.bias is not None:
                    sub.bias.zero_()


def state_to_numpy(module: nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_numpy_state(module: nn.Module, tensors: dict[str, np.ndarray], prefix: str) -> None:
    own = module.state_dict()
    state = {}
    for key, ref in own.items():
        name = f"{prefix}.{key}"
        if name not in tensors:
            raise KeyError(name)
        value = torch.from_numpy(np.array(tensors[name])).to(ref.dtype)
        if value.shape != ref.shape:
            raise ValueError(f"{name}: shape {tuple(value.shape)} != expected {tuple(ref.shape)}")
        state[key] = value
    module.load_state_dict(state)
