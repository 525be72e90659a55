"""Pre-training objectives: reconstruction MSE and the contrastive loss."""

from __future__ import annotations

import torch

from powerpm.errors import BatchError, NumericError


def loss_mse(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every element of the window batch."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return ((x - x_hat) ** 2).mean()


def pool_windows(z: torch.Tensor) -> torch.Tensor:
    """Window-level representation: mean over patches, then unit length."""
    pooled = z.mean(dim=-2)
    norms = pooled.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise NumericError("zero-norm pooled representation")
    return pooled / norms


def _unit(z: torch.Tensor) -> torch.Tensor:
    norms = z.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise NumericError("zero-norm representation in contrastive loss")
    return z / norms


def loss_dvcl(z_anchor: torch.Tensor, z_pos: torch.Tensor, temperature: float) -> torch.Tensor:
    """Contrastive loss over pooled window representations.

    For anchor i the numerator is its shifted positive and the denominator
    additionally ranges over the other B-1 anchors in the batch (the anchor
    itself is excluded). Similarities are cosine.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if z_anchor.shape != z_pos.shape or z_anchor.dim() != 2:
        raise ValueError("expected matching [B, d] anchor and positive representations")
    batch = z_anchor.shape[0]
    if batch < 2:
        raise BatchError("contrastive loss needs at least 2 anchors")

    a = _unit(z_anchor)
    p = _unit(z_pos)
    logits = (a @ a.T) / temperature                      # anchor-vs-anchor
    pos_logits = (a * p).sum(dim=-1) / temperature        # anchor-vs-own-positive
    # The denominator ranges over the positive plus the other anchors, so the
    # self-similarity diagonal is replaced by the positive logit.
    eye = torch.eye(batch, dtype=torch.bool, device=a.device)
    logits = logits.masked_fill(eye, 0.0) + torch.diag_embed(pos_logits)
    return (torch.logsumexp(logits, dim=-1) - pos_logits).mean()
