"""End-to-end corpus preparation: codes, windows, splits, clusters, graph.

Exogenous observations live at the region (city) level, so every descendant
instance shares its region's code series. Users are clustered on z-scored
mean daily profiles computed from the training period only, and window sets
are restricted to starts where every instance has a window so hierarchical
batches always cover the graph.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from powerpm.data.exogenous import ExogenousCoder
from powerpm.data.series import (
    EMPTY_SCHEMA,
    ExogenousSchema,
    InstanceSeries,
    Level,
    SplitPlan,
    Window,
)
from powerpm.data.synthetic import ExogenousSeries, SynthDataset, UserLabels
from powerpm.data.windows import (
    apply_normalization,
    chronological_split,
    compute_norm_stats,
    slice_windows,
)
from powerpm.downstream.finetune import TaskData
from powerpm.downstream.tasks import ANOMALY, CLASSIFY, FORECAST, IMPUTE, TaskSpec
from powerpm.errors import TaskError
from powerpm.hierarchy.clustering import ClusterAssignment, kmeans_dtw
from powerpm.hierarchy.graph import HierGraph, build_hierarchy_graph
from powerpm.pretrain.loop import PretrainData

log = logging.getLogger(__name__)

DAY_SECONDS = 86_400


@dataclass
class Corpus:
    instances: list[InstanceSeries]
    schema: ExogenousSchema
    graph: HierGraph | None
    assignment: ClusterAssignment | None
    plan: SplitPlan
    train: list[Window]
    val: list[Window]
    test: list[Window]
    norm_series: dict[str, np.ndarray]
    window_len: int
    frequency_seconds: int
    user_labels: dict[str, UserLabels] = field(default_factory=dict)

    def instances_at(self, level: Level) -> list[str]:
        return sorted(s.instance_id for s in self.instances if s.level == level)


def _region_of(instance: InstanceSeries, by_id: dict[str, InstanceSeries]) -> str:
    node = instance
    while node.parent_id is not None:
        node = by_id[node.parent_id]
    return node.instance_id


def _daily_profile(series: InstanceSeries, cutoff_ts: int) -> np.ndarray:
    points_per_day = max(1, DAY_SECONDS // series.frequency_seconds)
    values = series.values[series.timestamps <= cutoff_ts]
    n_days = len(values) // points_per_day
    if n_days < 1:
        values = series.values
        n_days = max(1, len(values) // points_per_day)
    profile = values[: n_days * points_per_day].reshape(n_days, points_per_day).mean(axis=0)
    std = profile.std()
    return (profile - profile.mean()) / (std if std > 0 else 1.0)


def cluster_users(
    instances: list[InstanceSeries],
    cutoff_ts: int,
    num_clusters: int,
    restarts: int = 10,
    seed: int = 0,
    band: int | None = None,
) -> ClusterAssignment | None:
    users = [s for s in instances if s.level == Level.USER]
    if not users:
        return None
    effective = min(num_clusters, len(users))
    if effective < num_clusters:
        log.warning("only %d users; clustering with %d clusters", len(users), effective)
    profiles = {u.instance_id: _daily_profile(u, cutoff_ts) for u in users}
    return kmeans_dtw(profiles, effective, n_restarts=restarts, seed=seed, band=band)


def prepare_corpus(
    instances: list[InstanceSeries],
    exogenous: dict[str, ExogenousSeries] | None = None,
    *,
    window_len: int,
    stride: int,
    coder: ExogenousCoder | None = None,
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    num_clusters: int = 12,
    cluster_restarts: int = 10,
    cluster_seed: int = 0,
    cluster_band: int | None = None,
    max_fill_fraction: float = 0.1,
    build_graph: bool = True,
    user_labels: dict[str, UserLabels] | None = None,
) -> Corpus:
    by_id = {s.instance_id: s for s in instances}
    schema = EMPTY_SCHEMA
    codes_by_region: dict[str, np.ndarray] = {}
    if coder is not None and exogenous:
        schema = coder.schema
        for region_id, exo in exogenous.items():
            codes_by_region[region_id] = coder.encode(
                exo.weather_labels,
                {"temp_max": exo.temp_max, "temp_min": exo.temp_min},
            )

    all_windows: list[Window] = []
    for series in sorted(instances, key=lambda s: s.instance_id):
        codes = None
        if codes_by_region:
            region = _region_of(series, by_id)
            codes = codes_by_region.get(region)
            if codes is not None and len(codes) != len(series):
                raise ValueError(
                    f"exogenous series for region {region!r} does not align with "
                    f"instance {series.instance_id!r}"
                )
        all_windows.extend(
            slice_windows(series, window_len, stride, codes=codes,
                          max_fill_fraction=max_fill_fraction)
        )

    # Keep only starts covered by every instance so snapshots stay complete.
    n_instances = len(instances)
    counts: dict[int, int] = {}
    for w in all_windows:
        counts[w.t_start] = counts.get(w.t_start, 0) + 1
    complete = {t for t, c in counts.items() if c == n_instances}
    dropped = len(all_windows) - sum(counts[t] for t in complete)
    if dropped:
        log.info("dropping %d windows at incomplete starts", dropped)
    windows = [w for w in all_windows if w.t_start in complete]

    plan, train, val, test = chronological_split(windows, ratios)
    stats = compute_norm_stats(train)
    for series in instances:  # constant or unseen instances fall back to raw stats
        if series.instance_id not in stats:
            stats[series.instance_id] = (float(series.values.mean()), 1.0)
    plan.norm_stats = stats
    train = apply_normalization(train, stats)
    val = apply_normalization(val, stats)
    test = apply_normalization(test, stats)

    norm_series = {}
    for series in instances:
        mean, std = stats[series.instance_id]
        norm_series[series.instance_id] = (series.values - mean) / std

    assignment, graph = None, None
    if build_graph:
        frequency = instances[0].frequency_seconds
        cutoff = plan.train_end + (window_len - 1) * frequency
        assignment = cluster_users(
            instances, cutoff, num_clusters, cluster_restarts, cluster_seed, cluster_band
        )
        graph = build_hierarchy_graph(instances, assignment)

    return Corpus(
        instances=list(instances),
        schema=schema,
        graph=graph,
        assignment=assignment,
        plan=plan,
        train=train,
        val=val,
        test=test,
        norm_series=norm_series,
        window_len=window_len,
        frequency_seconds=instances[0].frequency_seconds,
        user_labels=dict(user_labels or {}),
    )


def corpus_from_synth(dataset: SynthDataset, coder: ExogenousCoder | None, **kwargs) -> Corpus:
    return prepare_corpus(
        dataset.instances,
        dataset.exogenous,
        coder=coder,
        user_labels=dataset.user_labels,
        **kwargs,
    )


def build_pretrain_data(corpus: Corpus, split: str = "train") -> PretrainData:
    windows = {"train": corpus.train, "val": corpus.val, "test": corpus.test}[split]
    return PretrainData(windows=list(windows), schema=corpus.schema, graph=corpus.graph)


def _forecast_targets(
    corpus: Corpus, horizon: int, target_nodes: set[str]
) -> dict[tuple[str, int], np.ndarray]:
    by_id = {s.instance_id: s for s in corpus.instances}
    targets: dict[tuple[str, int], np.ndarray] = {}
    for windows in (corpus.train, corpus.val, corpus.test):
        for w in windows:
            if w.instance_id not in target_nodes:
                continue
            series = by_id[w.instance_id]
            start_idx = int((w.t_start - series.timestamps[0]) // series.frequency_seconds)
            lo = start_idx + corpus.window_len
            hi = lo + horizon
            if hi > len(series):
                continue
            targets[(w.instance_id, w.t_start)] = corpus.norm_series[w.instance_id][lo:hi]
    return targets


def build_task_data(corpus: Corpus, task: TaskSpec, target_level: Level | str) -> TaskData:
    """Assemble train/val/test windows and targets for one downstream task."""
    level = Level(target_level)
    target_nodes = set(corpus.instances_at(level))
    if not target_nodes:
        raise TaskError(f"corpus has no {level.value} instances")

    if task.family == FORECAST:
        targets = _forecast_targets(corpus, task.horizon, target_nodes)
        if not targets:
            raise TaskError("no window has enough lookahead for the forecast horizon")
    elif task.family == IMPUTE:
        targets = {}
    elif task.family in (CLASSIFY, ANOMALY):
        if level != Level.USER:
            raise TaskError("label tasks are defined on user instances")
        if not corpus.user_labels:
            raise TaskError("corpus carries no user labels")
        targets = {}
        for windows in (corpus.train, corpus.val, corpus.test):
            for w in windows:
                if w.instance_id not in target_nodes:
                    continue
                labels = corpus.user_labels[w.instance_id]
                value = (
                    int(labels.anomaly)
                    if task.family == ANOMALY
                    else int(labels.archetype == "industrial")
                )
                targets[(w.instance_id, w.t_start)] = value
        if task.family == CLASSIFY and task.n_classes != 2:
            raise TaskError("synthetic labels support 2-class tasks only")
    else:
        raise TaskError(f"unsupported family {task.family}")

    return TaskData(
        schema=corpus.schema,
        graph=corpus.graph,
        train=list(corpus.train),
        val=list(corpus.val),
        test=list(corpus.test),
        targets=targets,
        target_nodes=frozenset(target_nodes),
        frequency_seconds=corpus.frequency_seconds,
    )


def scale_default_lr(scale: str | None) -> float:
    """Published per-scale base learning rates (desk runs usually override)."""
    return {"full": 1e-6, "medium": 1e-6, "small": 2e-6, "tiny": 2e-6}.get(scale or "", 1e-3)


def floor_fraction_count(n: int, fraction: float) -> int:
    return math.floor(n * fraction)
