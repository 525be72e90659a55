"""Task heads on top of encoder representations.

Forecasting maps the flattened patch representations through one linear
layer; classification maps the patch-mean representation through one linear
layer plus softmax. Imputation reuses the encoder's reconstruction head and
scores only the masked block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from powerpm.errors import TaskError


class ForecastHead(nn.Module):
    """Single linear map from flattened [N_p * d] to the forecast horizon."""

    def __init__(self, num_patches: int, model_dim: int, horizon: int):
        super().__init__()
        if horizon < 1:
            raise TaskError(f"forecast horizon must be >= 1, got {horizon}")
        self.horizon = horizon
        self.linear = nn.Linear(num_patches * model_dim, horizon)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 3:
            raise TaskError("expected [N, num_patches, dim] representations")
        return self.linear(z.reshape(z.shape[0], -1))


class ClassifyHead(nn.Module):
    """Linear map + softmax on the patch-mean representation."""

    def __init__(self, model_dim: int, n_classes: int):
        super().__init__()
        if n_classes < 2:
            raise TaskError("need at least 2 classes")
        self.n_classes = n_classes
        self.linear = nn.Linear(model_dim, n_classes)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.linear(z.mean(dim=-2))

    def probabilities(self, z: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(z), dim=-1)


@dataclass(frozen=True)
class ImputeMask:
    """Patch-level mask for imputation inputs; always bidirectional."""

    masked_indices: tuple[int, ...]
    mode: str = "random"


def impute_eval_positions(window_len: int, mask_ratio: float, rng: np.random.Generator) -> np.ndarray:
    """One contiguous masked block of round(ratio * T_w) points."""
    block = round(mask_ratio * window_len)
    if block <= 0:
        raise TaskError(f"mask ratio {mask_ratio} masks zero points of {window_len}")
    if block > window_len:
        raise TaskError("mask block longer than the window")
    start = int(rng.integers(0, window_len - block + 1))
    mask = np.zeros(window_len, dtype=bool)
    mask[start:start + block] = True
    return mask


def patches_touching(positions: np.ndarray, time_idx: np.ndarray, valid: np.ndarray) -> ImputeMask:
    """Mask every patch that covers at least one masked timestamp."""
    touched = []
    for j in range(time_idx.shape[0]):
        covered = time_idx[j][valid[j]]
        if positions[covered].any():
            touched.append(j)
    if not touched:
        raise TaskError("masked block touches no patch")
    return ImputeMask(masked_indices=tuple(touched))
