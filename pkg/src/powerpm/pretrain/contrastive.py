"""Shifted-window pair sampling for contrastive pre-training.

An anchor is a (node, start) window; its positive is the same node's window
shifted forward by a fixed number of points. The other anchors in the batch
act as negatives: other instances at the same start (instance view) and,
when the batch mixes starts, the same instance at distant times (temporal
view).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from powerpm.data.series import Window
from powerpm.errors import BatchError


@dataclass(frozen=True)
class ContrastiveConfig:
    shift_points: int = 96
    temperature: float = 0.2
    batch_size: int = 16

    def __post_init__(self):
        if self.shift_points < 1:
            raise ValueError("shift_points must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


class WindowPool:
    """Windows indexed by (instance, start time) for shifted lookups."""

    def __init__(self, windows: list[Window]):
        self.by_key: dict[tuple[str, int], Window] = {}
        for w in windows:
            self.by_key[(w.instance_id, w.t_start)] = w
        self.keys = sorted(self.by_key)

    def __len__(self) -> int:
        return len(self.by_key)

    def get(self, instance_id: str, t_start: int) -> Window | None:
        return self.by_key.get((instance_id, t_start))


def sample_contrastive_batch(
    pool: WindowPool,
    batch_size: int,
    shift_points: int,
    rng: np.random.Generator,
    explicit_temporal_negatives: bool = False,
) -> tuple[list[Window], list[Window]]:
    """Sample distinct anchors whose shifted counterpart exists in the pool.

    With ``explicit_temporal_negatives`` half the batch is drawn from a
    single instance across different starts, guaranteeing temporal-view
    negatives; otherwise they arise only incidentally.
    """
    if not pool.keys:
        raise BatchError("empty window pool")
    frequency = next(iter(pool.by_key.values())).frequency_seconds
    shift_seconds = shift_points * frequency
    eligible = [
        (inst, t) for inst, t in pool.keys if (inst, t + shift_seconds) in pool.by_key
    ]
    if len(eligible) < 2:
        raise BatchError(
            f"only {len(eligible)} anchors have a +{shift_points}-point counterpart"
        )

    take = min(batch_size, len(eligible))
    chosen: list[tuple[str, int]] = []
    if explicit_temporal_negatives:
        instances = sorted({inst for inst, _ in eligible})
        focus = instances[int(rng.integers(len(instances)))]
        focus_keys = [key for key in eligible if key[0] == focus]
        n_focus = min(len(focus_keys), max(2, take // 2))
        picked = rng.choice(len(focus_keys), size=n_focus, replace=False)
        chosen.extend(focus_keys[i] for i in sorted(picked.tolist()))
    remaining = [key for key in eligible if key not in set(chosen)]
    n_rest = take - len(chosen)
    if n_rest > 0:
        picked = rng.choice(len(remaining), size=n_rest, replace=False)
        chosen.extend(remaining[i] for i in sorted(picked.tolist()))

    anchors = [pool.by_key[key] for key in chosen]
    positives = [pool.by_key[(inst, t + shift_seconds)] for inst, t in chosen]
    return anchors, positives
