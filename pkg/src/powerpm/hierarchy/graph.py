"""The typed directed hierarchy graph over city/district/cluster/user nodes.

City-district and district-cluster links are bidirectional (one edge per
direction, distinct relation names); district-to-user and user-to-cluster
links exist in exactly one direction. User-to-district edges are omitted on
purpose: clusters are the sparsified path from users back up the hierarchy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from powerpm.data.series import InstanceSeries, Level
from powerpm.errors import GraphError
from powerpm.hierarchy.clustering import ClusterAssignment

CITY_TO_DISTRICT = "city_to_district"
DISTRICT_TO_CITY = "district_to_city"
DISTRICT_TO_CLUSTER = "district_to_cluster"
CLUSTER_TO_DISTRICT = "cluster_to_district"
DISTRICT_TO_USER = "district_to_user"
USER_TO_CLUSTER = "user_to_cluster"

RELATIONS = (
    CITY_TO_DISTRICT,
    DISTRICT_TO_CITY,
    DISTRICT_TO_CLUSTER,
    CLUSTER_TO_DISTRICT,
    DISTRICT_TO_USER,
    USER_TO_CLUSTER,
)

_RELATION_ENDPOINTS = {
    CITY_TO_DISTRICT: (Level.CITY, Level.DISTRICT),
    DISTRICT_TO_CITY: (Level.DISTRICT, Level.CITY),
    DISTRICT_TO_CLUSTER: (Level.DISTRICT, Level.CLUSTER),
    CLUSTER_TO_DISTRICT: (Level.CLUSTER, Level.DISTRICT),
    DISTRICT_TO_USER: (Level.DISTRICT, Level.USER),
    USER_TO_CLUSTER: (Level.USER, Level.CLUSTER),
}

_PAIRED = {
    CITY_TO_DISTRICT: DISTRICT_TO_CITY,
    DISTRICT_TO_CITY: CITY_TO_DISTRICT,
    DISTRICT_TO_CLUSTER: CLUSTER_TO_DISTRICT,
    CLUSTER_TO_DISTRICT: DISTRICT_TO_CLUSTER,
}

_UNPAIRED = (DISTRICT_TO_USER, USER_TO_CLUSTER)


@dataclass
class HierGraph:
    nodes: list[tuple[str, Level]]
    edges: list[tuple[str, str, str]]
    levels: dict[str, Level] = field(init=False)

    def __post_init__(self):
        self.nodes = [(str(n), Level(lv)) for n, lv in self.nodes]
        self.levels = dict(self.nodes)
        if len(self.levels) != len(self.nodes):
            raise GraphError("duplicate node id in graph")
        edge_set = set(self.edges)
        if len(edge_set) != len(self.edges):
            raise GraphError("duplicate edge in graph")
        for src, dst, rel in self.edges:
            if rel not in _RELATION_ENDPOINTS:
                raise GraphError(f"unknown relation {rel!r}")
            want_src, want_dst = _RELATION_ENDPOINTS[rel]
            if self.levels.get(src) != want_src or self.levels.get(dst) != want_dst:
                raise GraphError(
                    f"edge ({src!r} -> {dst!r}, {rel}) inconsistent with node levels"
                )
            if rel in _PAIRED and (dst, src, _PAIRED[rel]) not in edge_set:
                raise GraphError(f"edge ({src!r} -> {dst!r}, {rel}) is missing its reverse")
            if rel in _UNPAIRED:
                for other_rel in RELATIONS:
                    if (dst, src, other_rel) in edge_set:
                        raise GraphError(
                            f"one-directional relation {rel} has a reverse edge {other_rel}"
                        )

    @property
    def node_ids(self) -> list[str]:
        return [n for n, _ in self.nodes]

    def nodes_at(self, level: Level) -> list[str]:
        return [n for n, lv in self.nodes if lv == level]

    def in_neighbors(self) -> dict[str, dict[str, list[str]]]:
        """relation -> destination node -> ordered source nodes."""
        out: dict[str, dict[str, list[str]]] = {rel: {} for rel in RELATIONS}
        for src, dst, rel in self.edges:
            out[rel].setdefault(dst, []).append(src)
        return out

    def background_components(self) -> int:
        """Connected components of the city/district/cluster subgraph."""
        keep = {n for n, lv in self.nodes if lv != Level.USER}
        parent = {n: n for n in keep}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for src, dst, _ in self.edges:
            if src in keep and dst in keep:
                parent[find(src)] = find(dst)
        return len({find(n) for n in keep})


def cluster_node_id(index: int) -> str:
    return f"cluster:{index}"


def build_hierarchy_graph(
    instances: list[InstanceSeries],
    assignment: ClusterAssignment | None = None,
) -> HierGraph:
    """Assemble the typed graph from parent links and a cluster assignment."""
    by_level: dict[Level, list[InstanceSeries]] = {lv: [] for lv in Level}
    for inst in instances:
        by_level[inst.level].append(inst)
    cities = sorted(s.instance_id for s in by_level[Level.CITY])
    districts = sorted(by_level[Level.DISTRICT], key=lambda s: s.instance_id)
    users = sorted(by_level[Level.USER], key=lambda s: s.instance_id)

    city_set = set(cities)
    district_set = {d.instance_id for d in districts}
    for d in districts:
        if d.parent_id not in city_set:
            raise GraphError(f"district {d.instance_id!r} has no city parent")
    for u in users:
        if u.parent_id not in district_set:
            raise GraphError(f"orphan user {u.instance_id!r}: parent is not a district")
    if users and assignment is None:
        raise GraphError("users present but no cluster assignment given")
    if assignment is not None:
        missing = [u.instance_id for u in users if u.instance_id not in assignment.assignment]
        if missing:
            raise GraphError(f"users missing from cluster assignment: {missing[:5]}")

    nodes: list[tuple[str, Level]] = [(c, Level.CITY) for c in cities]
    nodes += [(d.instance_id, Level.DISTRICT) for d in districts]
    cluster_ids = []
    if users:
        cluster_ids = [cluster_node_id(k) for k in range(assignment.num_clusters)]
        nodes += [(c, Level.CLUSTER) for c in cluster_ids]
    nodes += [(u.instance_id, Level.USER) for u in users]

    edges: list[tuple[str, str, str]] = []
    for d in districts:
        edges.append((d.parent_id, d.instance_id, CITY_TO_DISTRICT))
        edges.append((d.instance_id, d.parent_id, DISTRICT_TO_CITY))

    clusters_per_district: dict[str, set[int]] = {}
    for u in users:
        k = assignment.assignment[u.instance_id]
        clusters_per_district.setdefault(u.parent_id, set()).add(k)
        edges.append((u.parent_id, u.instance_id, DISTRICT_TO_USER))
        edges.append((u.instance_id, cluster_node_id(k), USER_TO_CLUSTER))
    for district_id in sorted(clusters_per_district):
        for k in sorted(clusters_per_district[district_id]):
            edges.append((district_id, cluster_node_id(k), DISTRICT_TO_CLUSTER))
            edges.append((cluster_node_id(k), district_id, CLUSTER_TO_DISTRICT))

    graph = HierGraph(nodes=nodes, edges=sorted(edges))
    if graph.background_components() > max(1, len(cities)):
        raise GraphError("hierarchy backbone is disconnected")
    return graph


def export_graph(graph: HierGraph, path: str | Path) -> None:
    """Edge-list text format: src_id<TAB>dst_id<TAB>relation_name."""
    with open(path, "w") as fh:
        for src, dst, rel in graph.edges:
            fh.write(f"{src}\t{dst}\t{rel}\n")
