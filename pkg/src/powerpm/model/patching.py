"""Window-to-patch index arithmetic shared by the encoder and reconstruction.

When the stride does not tile the window, the final patch keeps its nominal
offset but is left-padded by replicating its first covered value so that it
still ends at the window boundary. ``coverage`` exposes which patch elements
are real: padded elements are excluded from exogenous pooling and from the
de-overlap stitch.
"""

from __future__ import annotations

import numpy as np

from powerpm.model.config import PatchConfig


def coverage(window_len: int, cfg: PatchConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch timestamp indices and validity.

    Returns ``(time_idx, valid)`` of shape [num_patches, patch_len]:
    ``time_idx[j, t]`` is the window position addressed by patch j element t
    and ``valid[j, t]`` is False on replicated padding elements.
    """
    n_patches = cfg.num_patches(window_len)
    p, s = cfg.patch_len, cfg.stride
    time_idx = np.empty((n_patches, p), dtype=np.int64)
    valid = np.ones((n_patches, p), dtype=bool)
    for j in range(n_patches):
        start = j * s
        end = start + p
        if end <= window_len:
            time_idx[j] = np.arange(start, end)
        else:
            covered = window_len - start
            pad = p - covered
            time_idx[j, :pad] = start
            time_idx[j, pad:] = np.arange(start, window_len)
            valid[j, :pad] = False
    return time_idx, valid


def patch(x: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Slice a window (or stack of windows) into [..., num_patches, patch_len]."""
    x = np.asarray(x)
    time_idx, _ = coverage(x.shape[-1], cfg)
    return x[..., time_idx]


def stitch_weights(window_len: int, cfg: PatchConfig) -> np.ndarray:
    """How many patches cover each window position (for de-overlap averaging)."""
    time_idx, valid = coverage(window_len, cfg)
    counts = np.zeros(window_len, dtype=np.int64)
    np.add.at(counts, time_idx[valid], 1)
    return counts
