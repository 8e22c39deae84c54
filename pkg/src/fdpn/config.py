"""Run configuration: defaults, flat key=value files, overrides and a provenance hash."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import ValidationError
from .losses import LossConfig


@dataclass(frozen=True)
class RunConfig:
    # batch / snippetization / masking
    B: int = 16
    T: int = 32
    N: int = 16
    grid_n: int = 3
    top_k: int = 4
    mask_granularity: str = "frame"
    saliency: str = "tempdiff"
    saliency_dir: str = ""
    # losses
    gamma: float = 2.0
    R: int = 48
    lambda1: float = 1.0
    lambda2: float = 1.6e-3
    lambda3: float = 0.3
    eps: float = 1e-7
    hinged_ranking: bool = False
    # optimisation
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 200
    seed: int = 0
    checkpoint_every: int = 50
    joint_training: bool = False
    # features
    snippet_extractor: str = "toy_snippet"
    frame_extractor: str = "toy_frame"
    snippet_channels: int = 64
    frame_channels: int = 32
    extractor_seed: int = 0
    feature_dir: str = ""
    # snippet network
    snippet_net: str = "toy"
    snippet_hidden: int = 32
    snippet_steps: int = 300
    snippet_lr: float = 3e-3
    # frame / direction subnetworks
    width: int = 32
    depth: int = 2
    pool_size: int = 5
    mlp_expansion: int = 2
    dps_mode: str = "combined"
    dps_fusion: str = "product"
    dps_pooling: str = "score_weighted"
    # evaluation
    fps_nominal: float = 30.0

    def validate(self) -> "RunConfig":
        if min(self.B, self.T, self.N, self.grid_n) < 1:
            raise ValidationError("B, T, N and grid_n must be positive")
        if not 1 <= self.top_k <= self.grid_n**2:
            raise ValidationError(f"top_k must lie in [1, {self.grid_n ** 2}]")
        if self.R > self.T * self.N:
            raise ValidationError(f"R={self.R} exceeds frames per sequence T*N={self.T * self.N}")
        choices = {
            "mask_granularity": ("frame", "snippet"),
            "saliency": ("tempdiff", "file"),
            "optimizer": ("adam", "sgd"),
            "snippet_extractor": ("toy_snippet", "precomputed"),
            "frame_extractor": ("toy_frame", "precomputed"),
            "snippet_net": ("toy", "precomputed"),
            "dps_mode": ("network_only", "saliency_only", "combined"),
            "dps_fusion": ("product", "mixture"),
            "dps_pooling": ("mean", "score_weighted"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ValidationError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.epochs < 1 or self.lr <= 0:
            raise ValidationError("epochs must be >= 1 and lr > 0")
        self.loss_config()
        return self

    def loss_config(self) -> LossConfig:
        return LossConfig(gamma=self.gamma, lambda1=self.lambda1, lambda2=self.lambda2, lambda3=self.lambda3,
                          R=self.R, eps=self.eps, hinged_ranking=self.hinged_ranking)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        return replace(self, **coerce(overrides)).validate()

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in asdict(self).items())

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value: Any) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


def coerce(raw: Mapping[str, Any]) -> dict[str, Any]:
    """Convert string values to the declared field types; unknown keys are rejected."""
    out = {}
    for key, value in raw.items():
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ValidationError(f"unknown config key {key!r}")
        kind = _FIELD_TYPES[key]
        try:
            if not isinstance(value, str):
                out[key] = value
            elif kind == "bool":
                out[key] = _parse_bool(value)
            elif kind == "int":
                out[key] = int(value)
            elif kind == "float":
                out[key] = float(value)
            else:
                out[key] = value.strip()
        except ValueError:
            raise ValidationError(f"config key {key}: cannot parse {value!r} as {kind}") from None
    return out


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        raw.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        raw.update(overrides)
    return RunConfig().with_overrides(raw)
