"""Dynamic time warping with absolute-difference point cost.

Classic O(n*m) dynamic program over monotone alignments, optionally
restricted to a Sakoe-Chiba band. The band half-width is widened to
|len(a) - len(b)| when necessary so the end-to-end alignment stays feasible.
"""

from __future__ import annotations

import numpy as np


def _dtw_dp(a: np.ndarray, b: np.ndarray, band: int) -> float:
    n, m = len(a), len(b)
    prev = np.full(m + 1, np.inf)
    prev[0] = 0.0
    cur = np.empty(m + 1)
    for i in range(1, n + 1):
        cur[:] = np.inf
        lo, hi = 1, m
        if band >= 0:
            lo = max(1, i - band)
            hi = min(m, i + band)
        for j in range(lo, hi + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = abs(a[i - 1] - b[j - 1]) + best
        prev, cur = cur, prev
    return prev[m]


try:  # hot loop; identical float64 arithmetic with or without the JIT
    from numba import njit

    _dtw_kernel = njit(cache=True)(_dtw_dp)
except ImportError:  # pragma: no cover
    _dtw_kernel = _dtw_dp


def dtw_distance(a, b, band: int | None = None) -> float:
    """DTW distance between two 1-D series; symmetric, 0 for identical input."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("dtw_distance expects 1-D series")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("dtw_distance requires nonempty series")
    if band is not None:
        if band < 0:
            raise ValueError("band must be nonnegative")
        band = max(band, abs(len(a) - len(b)))
    return float(_dtw_kernel(a, b, -1 if band is None else band))
