"""Patch geometry and network-size configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class PatchConfig:
    """Window patching geometry: patch j covers [j*stride, j*stride + patch_len)."""

    patch_len: int = 48
    stride: int = 24

    def __post_init__(self):
        if not 1 <= self.stride <= self.patch_len:
            raise ValueError(
                f"need 1 <= stride <= patch_len, got stride={self.stride}, "
                f"patch_len={self.patch_len}"
            )

    def num_patches(self, window_len: int) -> int:
        if window_len < self.patch_len:
            raise ValueError(
                f"window of {window_len} points is shorter than patch_len={self.patch_len}"
            )
        return math.ceil((window_len - self.patch_len) / self.stride) + 1

    def to_dict(self) -> dict:
        return {"patch_len": self.patch_len, "stride": self.stride}


# scale name -> (transformer depth, model dim, ffn dim, attention heads)
SCALE_TABLE = {
    "tiny": (4, 768, 768, 16),
    "small": (12, 768, 1024, 16),
    "medium": (18, 768, 2048, 16),
    "full": (26, 1024, 2048, 16),
}


@dataclass(frozen=True)
class ModelConfig:
    model_dim: int = 768
    num_layers: int = 4
    ffn_dim: int = 768
    num_heads: int = 16
    rgcn_layers: int = 2
    scale: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ValueError(
                f"model_dim={self.model_dim} not divisible by num_heads={self.num_heads}"
            )
        for name in ("model_dim", "num_layers", "ffn_dim", "num_heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.rgcn_layers < 0:
            raise ValueError("rgcn_layers must be >= 0")

    @classmethod
    def from_scale(cls, scale: str, rgcn_layers: int = 2) -> "ModelConfig":
        if scale not in SCALE_TABLE:
            raise ValueError(f"unknown scale {scale!r}; expected one of {sorted(SCALE_TABLE)}")
        depth, dim, ffn, heads = SCALE_TABLE[scale]
        return cls(
            model_dim=dim,
            num_layers=depth,
            ffn_dim=ffn,
            num_heads=heads,
            rgcn_layers=rgcn_layers,
            scale=scale,
        )

    def to_dict(self) -> dict:
        return {
            "model_dim": self.model_dim,
            "num_layers": self.num_layers,
            "ffn_dim": self.ffn_dim,
            "num_heads": self.num_heads,
            "rgcn_layers": self.rgcn_layers,
        }
