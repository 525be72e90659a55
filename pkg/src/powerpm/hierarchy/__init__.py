from powerpm.hierarchy.clustering import ClusterAssignment, export_assignment, kmeans_dtw
from powerpm.hierarchy.dtw import dtw_distance
from powerpm.hierarchy.graph import (
    CITY_TO_DISTRICT,
    CLUSTER_TO_DISTRICT,
    DISTRICT_TO_CITY,
    DISTRICT_TO_CLUSTER,
    DISTRICT_TO_USER,
    RELATIONS,
    USER_TO_CLUSTER,
    HierGraph,
    build_hierarchy_graph,
    cluster_node_id,
    export_graph,
)

__all__ = [
    "CITY_TO_DISTRICT",
    "CLUSTER_TO_DISTRICT",
    "ClusterAssignment",
    "DISTRICT_TO_CITY",
    "DISTRICT_TO_CLUSTER",
    "DISTRICT_TO_USER",
    "HierGraph",
    "RELATIONS",
    "USER_TO_CLUSTER",
    "build_hierarchy_graph",
    "cluster_node_id",
    "dtw_distance",
    "export_assignment",
    "export_graph",
    "kmeans_dtw",
]
