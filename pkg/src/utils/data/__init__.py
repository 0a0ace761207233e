"""Synthetic clustered tasks, Dirichlet partitioning and drift injection."""

from utils.data.data_utils import (
    LabeledDataset,
    ClusterTask,
    DataConfig,
    DriftEvent,
    PartitionConfig,
    generate_cluster_tasks,
    dirichlet_partition,
    label_histogram,
    apply_drift,
    build_federation,
    select_affected_clients,
)

__all__ = [
    "LabeledDataset",
    "ClusterTask",
    "DataConfig",
    "DriftEvent",
    "PartitionConfig",
    "generate_cluster_tasks",
    "dirichlet_partition",
    "label_histogram",
    "apply_drift",
    "build_federation",
    "select_affected_clients",
]
