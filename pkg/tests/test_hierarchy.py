"""DTW distance, DTW k-means, and the typed hierarchy graph."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from powerpm.data.series import InstanceSeries, Level
from powerpm.errors import GraphError
from powerpm.hierarchy.clustering import ClusterAssignment, kmeans_dtw
from powerpm.hierarchy.dtw import dtw_distance
from powerpm.hierarchy.graph import (
    CITY_TO_DISTRICT,
    CLUSTER_TO_DISTRICT,
    DISTRICT_TO_CITY,
    DISTRICT_TO_CLUSTER,
    DISTRICT_TO_USER,
    USER_TO_CLUSTER,
    HierGraph,
    build_hierarchy_graph,
    export_graph,
)


def dtw_oracle(a, b):
    """Minimum cost over every explicitly enumerated monotone alignment."""
    n, m = len(a), len(b)
    best = [math.inf]

    def walk(i, j, acc):
        acc = acc + abs(a[i] - b[j])
        if i == n - 1 and j == m - 1:
            best[0] = min(best[0], acc)
            return
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


class TestDtwDistance:
    def test_identity(self):
        a = np.array([1.0, 2.0, 3.0])
        assert dtw_distance(a, a) == 0.0

    def test_single_cell(self):
        assert dtw_distance([0.0], [5.0]) == 5.0

    def test_tiny_alignment(self):
        # Brute force over all monotone alignments: the path that matches
        # both leading zeros to b[0] and the trailing 1 to b[1] costs 0.
        assert dtw_oracle([0.0, 0.0, 1.0], [0.0, 1.0]) == 0.0
        assert dtw_distance([0, 0, 1], [0, 1]) == 0.0
        # A pair where every alignment must absorb a mismatch:
        assert dtw_oracle([0.0, 2.0, 1.0], [0.0, 1.0]) == 1.0
        assert dtw_distance([0.0, 2.0, 1.0], [0.0, 1.0]) == 1.0

    def test_symmetry_and_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.normal(size=int(rng.integers(1, 6)))
            b = rng.normal(size=int(rng.integers(1, 6)))
            d = dtw_distance(a, b)
            assert d == dtw_distance(b, a)
            assert d == pytest.approx(dtw_oracle(a.tolist(), b.tolist()), abs=1e-12)

    def test_empty_series_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            dtw_distance([], [1.0])

    def test_band_widens_for_unequal_lengths(self):
        a = np.arange(6, dtype=float)
        b = np.arange(3, dtype=float)
        assert math.isfinite(dtw_distance(a, b, band=0))

    def test_band_restricts_alignment(self):
        a = np.array([0.0, 0.0, 0.0, 5.0])
        b = np.array([5.0, 0.0, 0.0, 0.0])
        assert dtw_distance(a, b, band=1) >= dtw_distance(a, b)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=5),
        st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=5),
    )
    def test_oracle_property(self, a, b):
        assert dtw_distance(a, b) == pytest.approx(dtw_oracle(a, b), abs=1e-9)


class TestKmeansDtw:
    def test_single_cluster(self):
        rng = np.random.default_rng(1)
        users = {f"u{i}": rng.normal(size=8) for i in range(5)}
        result = kmeans_dtw(users, 1, n_restarts=3, seed=0)
        assert set(result.assignment.values()) == {0}

    def test_two_identical_pairs(self):
        a = np.array([0.0, 0.0, 0.0, 0.0])
        b = np.array([5.0, 5.0, 5.0, 5.0])
        users = {"u0": a, "u1": a.copy(), "u2": b, "u3": b.copy()}
        result = kmeans_dtw(users, 2, n_restarts=10, seed=3)
        partition = {
            frozenset(u for u, c in result.assignment.items() if c == k)
            for k in range(2)
        }
        assert partition == {frozenset({"u0", "u1"}), frozenset({"u2", "u3"})}

        # Exhaustive check: that 2-partition uniquely minimizes mean-centroid
        # distortion among all 2-partitions of the four users.
        ids = sorted(users)
        best, best_cost = None, math.inf
        for bits in range(1, 7):  # proper nonempty bipartitions up to symmetry
            left = frozenset(ids[i] for i in range(4) if bits & (1 << i))
            right = frozenset(ids) - left
            if not right:
                continue
            cost = 0.0
            for side in (left, right):
                centroid = np.mean([users[u] for u in sorted(side)], axis=0)
                cost += sum(dtw_distance(users[u], centroid) for u in side)
            if cost < best_cost:
                best, best_cost = {left, right}, cost
        assert partition == best

    def test_singleton_clusters(self):
        users = {f"u{i}": np.full(4, float(i * 10)) for i in range(4)}
        result = kmeans_dtw(users, 4, n_restarts=5, seed=0)
        assert sorted(result.assignment.values()) == [0, 1, 2, 3]

    def test_too_many_clusters(self):
        with pytest.raises(ValueError, match="exceeds"):
            kmeans_dtw({"a": np.zeros(3), "b": np.ones(3)}, 3)

    def test_no_empty_cluster_and_local_optimality(self):
        rng = np.random.default_rng(7)
        users = {f"u{i}": rng.normal(size=6) for i in range(9)}
        result = kmeans_dtw(users, 3, n_restarts=5, seed=2)
        counts = [0, 0, 0]
        for cluster in result.assignment.values():
            counts[cluster] += 1
        assert all(c > 0 for c in counts)
        for user, cluster in result.assignment.items():
            distances = [dtw_distance(users[user], c) for c in result.centroids]
            assert distances[cluster] == pytest.approx(min(distances), abs=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        users = {f"u{i}": rng.normal(size=6) for i in range(6)}
        r1 = kmeans_dtw(users, 2, n_restarts=4, seed=9)
        r2 = kmeans_dtw(users, 2, n_restarts=4, seed=9)
        assert r1.assignment == r2.assignment
        assert np.array_equal(r1.centroids, r2.centroids)


def _tree(n_cities=1, districts_per_city=2, users_per_district=2):
    instances = []
    for c in range(n_cities):
        city = f"c{c}"
        instances.append(InstanceSeries(city, Level.CITY, None, [0, 900], [1.0, 2.0], 900))
        for d in range(districts_per_city):
            district = f"{city}d{d}"
            instances.append(
                InstanceSeries(district, Level.DISTRICT, city, [0, 900], [1.0, 2.0], 900)
            )
            for u in range(users_per_district):
                instances.append(
                    InstanceSeries(f"{district}u{u}", Level.USER, district, [0, 900], [1.0, 2.0], 900)
                )
    return instances


class TestBuildHierarchyGraph:
    def test_hand_enumerated_counts(self):
        # 1 city, 2 districts, 4 users (2 per district), 2 clusters with one
        # cluster per district: |V| = 9 and directed edges
        # 4 (city<->district) + 4 (district<->cluster) + 4 (district->user)
        # + 4 (user->cluster) = 16.
        instances = _tree()
        assignment = ClusterAssignment(
            assignment={"c0d0u0": 0, "c0d0u1": 0, "c0d1u0": 1, "c0d1u1": 1},
            num_clusters=2,
            centroids=np.zeros((2, 2)),
        )
        graph = build_hierarchy_graph(instances, assignment)
        assert len(graph.nodes) == 9
        assert len(graph.edges) == 16
        by_rel = {}
        for _, _, rel in graph.edges:
            by_rel[rel] = by_rel.get(rel, 0) + 1
        assert by_rel == {
            CITY_TO_DISTRICT: 2,
            DISTRICT_TO_CITY: 2,
            DISTRICT_TO_CLUSTER: 2,
            CLUSTER_TO_DISTRICT: 2,
            DISTRICT_TO_USER: 4,
            USER_TO_CLUSTER: 4,
        }

    def test_zero_users_degenerate(self):
        instances = [s for s in _tree() if s.level != Level.USER]
        graph = build_hierarchy_graph(instances, None)
        assert {lv for _, lv in graph.nodes} == {Level.CITY, Level.DISTRICT}
        assert {rel for _, _, rel in graph.edges} == {CITY_TO_DISTRICT, DISTRICT_TO_CITY}

    def test_relabeling_preserves_degree_multisets(self):
        instances = _tree()
        assignment = ClusterAssignment(
            assignment={"c0d0u0": 0, "c0d0u1": 0, "c0d1u0": 1, "c0d1u1": 1},
            num_clusters=2,
            centroids=np.zeros((2, 2)),
        )
        g1 = build_hierarchy_graph(instances, assignment)

        mapping = {}
        renamed = []
        for s in instances:
            mapping[s.instance_id] = f"X{s.instance_id}X"
        for s in instances:
            renamed.append(
                InstanceSeries(
                    mapping[s.instance_id], s.level,
                    mapping.get(s.parent_id), s.timestamps, s.values, s.frequency_seconds,
                )
            )
        assignment2 = ClusterAssignment(
            assignment={mapping[u]: c for u, c in assignment.assignment.items()},
            num_clusters=2,
            centroids=np.zeros((2, 2)),
        )
        g2 = build_hierarchy_graph(renamed, assignment2)

        def degree_multiset(graph):
            out = {}
            for src, dst, rel in graph.edges:
                out.setdefault(rel, []).append("x")
            deg = {}
            for node, _ in graph.nodes:
                row = []
                for rel in sorted({r for _, _, r in graph.edges}):
                    row.append(sum(1 for s, d, r in graph.edges if r == rel and d == node))
                deg.setdefault(tuple(row), 0)
                deg[tuple(row)] += 1
            return deg

        assert degree_multiset(g1) == degree_multiset(g2)

    def test_orphan_user_named(self):
        instances = _tree()
        instances.append(
            InstanceSeries("lost", Level.USER, "nowhere", [0, 900], [1.0, 2.0], 900)
        )
        with pytest.raises(GraphError, match="lost"):
            build_hierarchy_graph(instances, None)

    def test_every_user_in_and_out_degree(self):
        instances = _tree(districts_per_city=3, users_per_district=3)
        users = [s.instance_id for s in instances if s.level == Level.USER]
        assignment = ClusterAssignment(
            assignment={u: i % 2 for i, u in enumerate(sorted(users))},
            num_clusters=2,
            centroids=np.zeros((2, 2)),
        )
        graph = build_hierarchy_graph(instances, assignment)
        for user in users:
            assert any(dst == user and rel == DISTRICT_TO_USER for _, dst, rel in graph.edges)
            assert any(src == user and rel == USER_TO_CLUSTER for src, _, rel in graph.edges)

    def test_direction_pairing_enforced(self):
        nodes = [("c", Level.CITY), ("d", Level.DISTRICT)]
        with pytest.raises(GraphError, match="reverse"):
            HierGraph(nodes=nodes, edges=[("c", "d", CITY_TO_DISTRICT)])

    def test_one_directional_relations_reject_reverse(self):
        nodes = [("c", Level.CITY), ("d", Level.DISTRICT), ("u", Level.USER)]
        edges = [
            ("c", "d", CITY_TO_DISTRICT),
            ("d", "c", DISTRICT_TO_CITY),
            ("d", "u", DISTRICT_TO_USER),
        ]
        HierGraph(nodes=nodes, edges=edges)  # valid

    def test_export_format(self, tmp_path):
        instances = [s for s in _tree() if s.level != Level.USER]
        graph = build_hierarchy_graph(instances, None)
        out = tmp_path / "graph.tsv"
        export_graph(graph, out)
        lines = out.read_text().strip().split("\n")
        assert len(lines) == len(graph.edges)
        for line in lines:
            src, dst, rel = line.split("\t")
            assert (src, dst, rel) in set(graph.edges)
