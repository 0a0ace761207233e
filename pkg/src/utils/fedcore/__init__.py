"""Local training and edge/cloud aggregation."""

from utils.fedcore.fedcore_utils import (
    ClientState,
    ClusterState,
    RefineConfig,
    local_train,
    edge_aggregate,
    compute_rho,
    cloud_aggregate_dynamic,
    cloud_aggregate_naive,
    divergence_aware_lambda,
    refine_cluster,
)

__all__ = [
    "ClientState",
    "ClusterState",
    "RefineConfig",
    "local_train",
    "edge_aggregate",
    "compute_rho",
    "cloud_aggregate_dynamic",
    "cloud_aggregate_naive",
    "divergence_aware_lambda",
    "refine_cluster",
]
