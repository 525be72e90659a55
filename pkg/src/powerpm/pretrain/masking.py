"""Patch-mask specifications: scattered random masks or a causal suffix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from powerpm.errors import MaskError

RANDOM = "random"
CAUSAL = "causal"


@dataclass(frozen=True)
class MaskSpec:
    ratio: float
    mode: str
    masked_indices: tuple[int, ...]
    num_patches: int

    def __post_init__(self):
        if self.mode not in (RANDOM, CAUSAL):
            raise MaskError(f"unknown mask mode {self.mode!r}")
        idx = tuple(int(i) for i in self.masked_indices)
        if list(idx) != sorted(set(idx)):
            raise MaskError("masked_indices must be sorted and distinct")
        if idx and (idx[0] < 0 or idx[-1] >= self.num_patches):
            raise MaskError("masked index out of range")
        expected = round(self.ratio * self.num_patches)
        if len(idx) != expected:
            raise MaskError(
                f"{len(idx)} masked indices, expected round({self.ratio} * "
                f"{self.num_patches}) = {expected}"
            )
        if self.mode == CAUSAL:
            suffix = tuple(range(self.num_patches - len(idx), self.num_patches))
            if idx != suffix:
                raise MaskError(f"causal mask must be the suffix {suffix}, got {idx}")
        object.__setattr__(self, "masked_indices", idx)

    @property
    def num_masked(self) -> int:
        return len(self.masked_indices)


def make_mask(num_patches: int, ratio: float, alpha: float, seed: int) -> MaskSpec:
    """Random scattered mask when alpha < 0.5, else a causal suffix mask."""
    if not 0.0 < ratio < 1.0:
        raise MaskError(f"mask ratio must be in (0, 1), got {ratio}")
    n_masked = round(ratio * num_patches)
    if n_masked == 0:
        raise MaskError(
            f"round({ratio} * {num_patches}) masks nothing; window too short for this ratio"
        )
    if alpha < 0.5:
        rng = np.random.default_rng(seed)
        picked = np.sort(rng.choice(num_patches, size=n_masked, replace=False))
        return MaskSpec(ratio=ratio, mode=RANDOM, masked_indices=tuple(int(i) for i in picked),
                        num_patches=num_patches)
    suffix = tuple(range(num_patches - n_masked, num_patches))
    return MaskSpec(ratio=ratio, mode=CAUSAL, masked_indices=suffix, num_patches=num_patches)
