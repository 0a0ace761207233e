"""Federated dynamic clustering."""

from utils.fdc.fdc_utils import (
    FdcConfig,
    AffinityMatrix,
    ClusterAssignment,
    affinity,
    build_affinity_matrix,
    rank_clients,
    threshold_cluster,
    enforce_variance,
    detect_drift,
    reassign_client,
    recluster,
)

__all__ = [
    "FdcConfig",
    "AffinityMatrix",
    "ClusterAssignment",
    "affinity",
    "build_affinity_matrix",
    "rank_clients",
    "threshold_cluster",
    "enforce_variance",
    "detect_drift",
    "reassign_client",
    "recluster",
]
