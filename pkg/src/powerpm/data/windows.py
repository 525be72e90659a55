"""Window slicing, chronological splitting, and train-only normalization."""

from __future__ import annotations

import logging

import numpy as np

from powerpm.data.series import InstanceSeries, SplitPlan, Window
from powerpm.errors import SplitError

log = logging.getLogger(__name__)


def slice_windows(
    series: InstanceSeries,
    window_len: int,
    stride: int,
    codes: np.ndarray | None = None,
    max_fill_fraction: float | None = None,
) -> list[Window]:
    """Slice a series into windows at offsets 0, stride, 2*stride, ...

    ``codes`` is an optional [len(series), K] array aligned with the series;
    each window carries its slice. Windows whose gap-filled fraction exceeds
    ``max_fill_fraction`` are dropped. A series shorter than ``window_len``
    yields no windows.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = len(series)
    if window_len > n:
        log.info(
            "series %s has %d points, shorter than window %d: no windows",
            series.instance_id, n, window_len,
        )
        return []
    if codes is not None and len(codes) != n:
        raise ValueError("codes must align with the series")

    out = []
    for offset in range(0, n - window_len + 1, stride):
        sl = slice(offset, offset + window_len)
        fill = 0.0
        if series.filled_mask is not None:
            fill = float(series.filled_mask[sl].mean())
            if max_fill_fraction is not None and fill > max_fill_fraction:
                continue
        out.append(
            Window(
                instance_id=series.instance_id,
                values=series.values[sl].copy(),
                t_start=int(series.timestamps[offset]),
                t_end=int(series.timestamps[offset + window_len - 1]),
                frequency_seconds=series.frequency_seconds,
                codes=None if codes is None else codes[sl].copy(),
                fill_fraction=fill,
            )
        )
    return out


def _advance_past_ties(ordered: list[Window], boundary: int) -> int:
    """Push a split boundary forward until it falls between distinct start times."""
    n = len(ordered)
    while 0 < boundary < n and ordered[boundary - 1].t_start == ordered[boundary].t_start:
        boundary += 1
    return boundary


def chronological_split(
    windows: list[Window],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> tuple[SplitPlan, list[Window], list[Window], list[Window]]:
    """Partition windows by start time into train/val/test.

    Counts are floor(ratio * n) for train and val with the remainder going to
    test. When several windows share a start time (one per instance is the
    usual case), the whole tie group stays in the earlier split so that
    max(train starts) < min(val starts) < ... holds strictly.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios {ratios} do not sum to 1")
    n = len(windows)
    if n < 3:
        raise SplitError(f"need at least 3 windows to split, got {n}")

    ordered = sorted(windows, key=lambda w: (w.t_start, w.instance_id))
    b1 = _advance_past_ties(ordered, int(np.floor(ratios[0] * n)))
    b2 = _advance_past_ties(ordered, max(b1 + 1, int(np.floor((ratios[0] + ratios[1]) * n))))
    if b1 == 0 or b1 >= n or b2 >= n:
        raise SplitError("too few distinct start times for a 3-way split")

    train, val, test = ordered[:b1], ordered[b1:b2], ordered[b2:]
    plan = SplitPlan(
        ratios=ratios,
        train_end=train[-1].t_start,
        val_end=val[-1].t_start,
    )
    return plan, train, val, test


def compute_norm_stats(train_windows: list[Window]) -> dict[str, tuple[float, float]]:
    """Per-instance mean/std over train-window values; std 0 falls back to 1."""
    grouped: dict[str, list[np.ndarray]] = {}
    for w in train_windows:
        grouped.setdefault(w.instance_id, []).append(w.values)
    stats = {}
    for instance_id, chunks in grouped.items():
        flat = np.concatenate(chunks)
        mean = float(flat.mean())
        std = float(flat.std())
        stats[instance_id] = (mean, std if std > 0 else 1.0)
    return stats


def apply_normalization(windows: list[Window], stats: dict[str, tuple[float, float]]) -> list[Window]:
    """Z-score window values with the given per-instance stats."""
    out = []
    for w in windows:
        if w.instance_id not in stats:
            raise KeyError(f"no normalization stats for instance {w.instance_id}")
        mean, std = stats[w.instance_id]
        out.append(
            Window(
                instance_id=w.instance_id,
                values=(w.values - mean) / std,
                t_start=w.t_start,
                t_end=w.t_end,
                frequency_seconds=w.frequency_seconds,
                codes=w.codes,
                fill_fraction=w.fill_fraction,
            )
        )
    return out
