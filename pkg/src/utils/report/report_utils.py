"""Per-round objectives, diagnostics and evaluation."""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.data.data_utils import LabeledDataset, label_histogram
from utils.errors import EmptyDataError
from utils.fedcore.fedcore_utils import ClientState, ClusterState
from utils.model.model_utils import Model, accuracy, loss
from utils.numerics.numerics_utils import cosine_similarity, squared_l2, symmetric_kl

METRICS_SCHEMA_VERSION = 1
METRICS_COLUMNS = [
    "round",
    "method",
    "global_acc",
    "mean_cluster_acc",
    "cluster_accs",
    "p_edge",
    "p_cloud",
    "h",
    "var_p",
    "mean_pair_divergence",
    "wcss",
    "n_clusters",
    "misclustering_rate",
    "rho",
    "n_participants",
    "comm_client_edge",
    "comm_edge_cloud",
    "comm_client_cloud",
]


@dataclass
class RoundMetrics:
    round: int
    method: str
    mean_cluster_acc: float
    cluster_accs: Dict[int, float]
    p_edge: float
    h: float
    var_p: float
    mean_pair_divergence: float
    n_clusters: int
    n_participants: int
    global_acc: Optional[float] = None
    p_cloud: Optional[float] = None
    wcss: Optional[float] = None
    misclustering_rate: Optional[float] = None
    rho: Optional[Dict[int, float]] = None
    comm_client_edge: int = 0
    comm_edge_cloud: int = 0
    comm_client_cloud: int = 0

    def to_row(self) -> dict:
        row = asdict(self)
        row["cluster_accs"] = _format_pairs(self.cluster_accs)
        row["rho"] = _format_pairs(self.rho) if self.rho is not None else None
        return row


@dataclass(frozen=True)
class DivergenceDiagnostics:
    cluster_ids: Tuple[int, ...]
    pairwise_sq_distance: np.ndarray = field(repr=False)
    label_divergence: np.ndarray = field(repr=False)
    cluster_losses: Dict[int, float] = field(default_factory=dict)
    var_p: float = 0.0

    @property
    def mean_pair_divergence(self) -> float:
        m = len(self.cluster_ids)
        if m < 2:
            return 0.0
        upper = self.pairwise_sq_distance[np.triu_indices(m, k=1)]
        return float(upper.mean())


@dataclass(frozen=True)
class DriftMetrics:
    drift_round: int
    pre_drift_peak: float
    post_drift_trough: float
    drop_pp: float
    recovery_rounds: Optional[int]

    def to_json(self) -> dict:
        payload = asdict(self)
        payload["recovery"] = "no recovery" if self.recovery_rounds is None else self.recovery_rounds
        return payload


def _format_pairs(values: Dict[int, float]) -> str:
    return ";".join(f"{k}:{repr(float(v))}" for k, v in sorted(values.items()))


def eval_accuracy(model: Model, data: LabeledDataset) -> float:
    """Fraction of argmax-correct predictions."""
    if len(data) == 0:
        raise EmptyDataError("cannot evaluate accuracy on an empty dataset")
    return accuracy(model, data.features, data.labels)


def _members_by_cluster(
    clusters: Sequence[ClusterState], clients: Dict[int, ClientState]
) -> List[Tuple[ClusterState, List[ClientState]]]:
    grouped = []
    for cluster in sorted(clusters, key=lambda k: k.cluster_id):
        members = [clients[c] for c in sorted(cluster.members)]
        if not members:
            raise EmptyDataError(f"cluster {cluster.cluster_id} has no members")
        grouped.append((cluster, members))
    return grouped


def cluster_losses(clusters: Sequence[ClusterState], clients: Dict[int, ClientState]) -> Dict[int, float]:
    """P_k: mean over members of the cluster model's loss on each member's train shard."""
    result = {}
    for cluster, members in _members_by_cluster(clusters, clients):
        per_member = [loss(cluster.model, m.train.features, m.train.labels) for m in members]
        result[cluster.cluster_id] = float(np.mean(per_member))
    return result


def objectives(
    clusters: Sequence[ClusterState],
    clients: Dict[int, ClientState],
    w_g: Optional[Model],
) -> Tuple[float, Optional[float], float]:
    """
    Edge objective, global objective and clustering error.

    P_edge = sum_k mean_{i in C_k} L(w_{e,k}; D_i)
    P_cloud = mean_i L(w_g; D_i) (None without a global model)
    H = sum_k mean_{i in C_k} ||w_i - w_{e,k}||^2
    """
    grouped = _members_by_cluster(clusters, clients)
    p_edge = sum(cluster_losses(clusters, clients).values())
    h = 0.0
    for cluster, members in grouped:
        h += float(np.mean([squared_l2(m.model.params, cluster.model.params) for m in members]))
    p_cloud = None
    if w_g is not None:
        ordered = [clients[c] for c in sorted(clients)]
        p_cloud = float(np.mean([loss(w_g, m.train.features, m.train.labels) for m in ordered]))
    return float(p_edge), p_cloud, h


def divergence_diagnostics(
    clusters: Sequence[ClusterState], clients: Dict[int, ClientState]
) -> DivergenceDiagnostics:
    """
    Pairwise ||w_{e,j} - w_{e,k}||^2, symmetric KL of pooled cluster label
    histograms, and Var(P) = sum_k p_k (P_k - E[P])^2 with p_k = |D_k| / |D|.
    """
    ordered = sorted(clusters, key=lambda k: k.cluster_id)
    if not ordered:
        raise EmptyDataError("no clusters to diagnose")
    m = len(ordered)
    pairwise = np.zeros((m, m))
    label_div = np.zeros((m, m))
    num_classes = ordered[0].model.spec.num_classes
    histograms = []
    for cluster in ordered:
        hist = np.zeros(num_classes, dtype=np.int64)
        for c in cluster.members:
            hist += label_histogram(clients[c].train, num_classes)
        histograms.append(hist)
    for i in range(m):
        for j in range(i + 1, m):
            pairwise[i, j] = pairwise[j, i] = squared_l2(ordered[i].model.params, ordered[j].model.params)
            label_div[i, j] = label_div[j, i] = symmetric_kl(histograms[i], histograms[j])

    losses = cluster_losses(ordered, clients)
    sizes = np.array([k.data_size for k in ordered], dtype=np.float64)
    weights = sizes / sizes.sum()
    values = np.array([losses[k.cluster_id] for k in ordered])
    expected = float(np.dot(weights, values))
    var_p = float(np.dot(weights, (values - expected) ** 2))
    return DivergenceDiagnostics(tuple(k.cluster_id for k in ordered), pairwise, label_div, losses, var_p)


def similarity_heatmap(clients: Sequence[ClientState]) -> pd.DataFrame:
    """Client-model cosine similarity matrix, indexed by client id, unit diagonal."""
    ordered = sorted(clients, key=lambda c: c.client_id)
    n = len(ordered)
    matrix = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            matrix[i, j] = matrix[j, i] = cosine_similarity(ordered[i].model.params, ordered[j].model.params)
    ids = [c.client_id for c in ordered]
    return pd.DataFrame(matrix, index=pd.Index(ids, name="client_id"), columns=ids)


def similarity_block_stats(similarity: pd.DataFrame, groups: Dict[int, int]) -> dict:
    """
    Summary statistics for a client similarity matrix split into groups.

    Args:
        similarity: Square DataFrame from similarity_heatmap
        groups: client id -> group label

    Returns:
        Dictionary with:
        - mean_intra: mean off-diagonal similarity within groups
        - mean_inter: mean similarity across groups
        - block_gap: mean_intra - mean_inter
        - max_similarity / min_similarity over off-diagonal entries
    """
    ids = list(similarity.index)
    values = similarity.values
    labels = np.array([groups[c] for c in ids])
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(ids), dtype=bool)
    intra = values[same & off_diag]
    inter = values[~same]
    mean_intra = float(intra.mean()) if intra.size else float("nan")
    mean_inter = float(inter.mean()) if inter.size else float("nan")
    off = values[off_diag]
    return {
        "mean_intra": mean_intra,
        "mean_inter": mean_inter,
        "block_gap": mean_intra - mean_inter,
        "max_similarity": float(off.max()) if off.size else float("nan"),
        "min_similarity": float(off.min()) if off.size else float("nan"),
    }


def drift_metrics(acc_series: Sequence[float], drift_round: int, tolerance_pp: float = 0.5) -> DriftMetrics:
    """
    Accuracy drop and recovery around a drift round.

    acc_series[t - 1] is the accuracy measured at the end of round t. The peak
    is the best accuracy before drift_round; the trough is the worst at or
    after it. Recovery is 0 when the trough stays within tolerance_pp
    percentage points of the peak; otherwise it counts rounds from
    drift_round to the first round at or after the trough that is back
    within tolerance. None means no recovery.
    """
    series = np.asarray(acc_series, dtype=np.float64)
    if drift_round < 2 or drift_round > series.size:
        raise ValueError(f"drift round {drift_round} needs pre- and post-drift rounds in a {series.size}-round series")
    pre = series[: drift_round - 1]
    post = series[drift_round - 1 :]
    peak = float(pre.max())
    trough_offset = int(np.argmin(post))
    trough = float(post[trough_offset])
    threshold = peak - tolerance_pp / 100.0
    if trough >= threshold:
        recovery = 0
    else:
        recovered = np.flatnonzero(post[trough_offset:] >= threshold)
        recovery = int(trough_offset + recovered[0]) if recovered.size else None
    return DriftMetrics(
        drift_round=drift_round,
        pre_drift_peak=peak,
        post_drift_trough=trough,
        drop_pp=max(0.0, (peak - trough) * 100.0),
        recovery_rounds=recovery,
    )


def rounds_to_target(acc_series: Sequence[float], target: float) -> Optional[int]:
    """First (1-based) round whose accuracy reaches target, else None."""
    for index, value in enumerate(acc_series):
        if value >= target:
            return index + 1
    return None


def metrics_frame(metrics: Sequence[RoundMetrics]) -> pd.DataFrame:
    """One row per round with the stable METRICS_COLUMNS layout."""
    return pd.DataFrame([m.to_row() for m in metrics], columns=METRICS_COLUMNS)
