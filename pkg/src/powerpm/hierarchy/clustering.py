"""Lloyd-style k-means over DTW distances with arithmetic-mean centroids.

Several independent restarts are run and the partition that occurs most
often across restarts wins, with ties broken by lowest total distortion.
Empty clusters are repaired during iteration by donating the point farthest
from its current centroid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from powerpm.hierarchy.dtw import dtw_distance

MAX_ITERATIONS = 100


@dataclass
class ClusterAssignment:
    assignment: dict[str, int]
    num_clusters: int
    centroids: np.ndarray  # [num_clusters, series_len]

    def members(self, cluster: int) -> list[str]:
        return sorted(u for u, c in self.assignment.items() if c == cluster)


def _distances(series: np.ndarray, centroids: np.ndarray, band: int | None) -> np.ndarray:
    out = np.empty((len(series), len(centroids)))
    for i, s in enumerate(series):
        for k, c in enumerate(centroids):
            out[i, k] = dtw_distance(s, c, band=band)
    return out


def _repair_empty(labels: np.ndarray, dist: np.ndarray, num_clusters: int) -> np.ndarray:
    """Move the point farthest from its centroid into each empty cluster."""
    labels = labels.copy()
    for k in range(num_clusters):
        if np.any(labels == k):
            continue
        counts = np.bincount(labels, minlength=num_clusters)
        movable = np.where(counts[labels] > 1)[0]
        if len(movable) == 0:
            break
        own = dist[movable, labels[movable]]
        labels[movable[int(np.argmax(own))]] = k
    return labels


def _single_run(
    series: np.ndarray, num_clusters: int, rng: np.random.Generator, band: int | None
) -> tuple[np.ndarray, np.ndarray, float]:
    n = len(series)
    centroids = series[rng.choice(n, size=num_clusters, replace=False)].copy()
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(MAX_ITERATIONS):
        dist = _distances(series, centroids, band)
        new_labels = _repair_empty(dist.argmin(axis=1), dist, num_clusters)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(num_clusters):
            centroids[k] = series[labels == k].mean(axis=0)
    dist = _distances(series, centroids, band)
    distortion = float(dist[np.arange(n), labels].sum())
    return labels, centroids, distortion


def kmeans_dtw(
    user_windows: dict[str, np.ndarray],
    num_clusters: int,
    n_restarts: int = 10,
    seed: int = 0,
    band: int | None = None,
) -> ClusterAssignment:
    """Cluster equal-length user series; returns the modal partition."""
    if num_clusters < 1:
        raise ValueError("num_clusters must be >= 1")
    if num_clusters > len(user_windows):
        raise ValueError(
            f"num_clusters={num_clusters} exceeds the {len(user_windows)} users"
        )
    user_ids = sorted(user_windows)
    lengths = {len(user_windows[u]) for u in user_ids}
    if len(lengths) != 1:
        raise ValueError("all user series must share one length")
    series = np.stack([np.asarray(user_windows[u], dtype=np.float64) for u in user_ids])

    runs = []
    for r in range(n_restarts):
        rng = np.random.default_rng(seed + r)
        labels, centroids, distortion = _single_run(series, num_clusters, rng, band)
        partition = frozenset(
            frozenset(user_ids[i] for i in np.where(labels == k)[0])
            for k in range(num_clusters)
        )
        runs.append((partition, distortion, labels, centroids))

    counts: dict[frozenset, int] = {}
    for partition, *_ in runs:
        counts[partition] = counts.get(partition, 0) + 1
    best = min(runs, key=lambda r: (-counts[r[0]], r[1]))
    _, _, labels, centroids = best

    # Canonical cluster indices: order clusters by their smallest member id.
    order = sorted(range(num_clusters), key=lambda k: min(
        user_ids[i] for i in np.where(labels == k)[0]
    ))
    relabel = {old: new for new, old in enumerate(order)}
    assignment = {user_ids[i]: relabel[int(labels[i])] for i in range(len(user_ids))}
    return ClusterAssignment(
        assignment=assignment,
        num_clusters=num_clusters,
        centroids=centroids[order],
    )


def export_assignment(assignment: ClusterAssignment, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "cluster_index"])
        for user_id in sorted(assignment.assignment):
            w.writerow([user_id, assignment.assignment[user_id]])
