"""Federated dynamic clustering: hybrid affinity, threshold clustering, variance control, drift checks.

Affinity is a dissimilarity: A(i, j) = gamma * JSD(Q_i, Q_j) + (1 - gamma) * (1 - cos(w_i, w_j)) / 2.
Each client is embedded as its affinity-matrix row; centroids are mean rows and
distances are L2 in row space. Ties always break toward the lower client or
cluster id.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import pdist, squareform
from scipy.special import rel_entr
from sklearn.metrics import confusion_matrix

from utils.errors import ConfigError, DegenerateVectorError
from utils.fedcore.fedcore_utils import ClientState
from utils.model.model_utils import Model
from utils.numerics.numerics_utils import LOG_BASE, Histogram, cosine_similarity, jsd, smoothed_distribution

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FdcConfig:
    gamma: float = 0.5
    delta: float = 0.7
    phi: float = 0.5
    recluster_every: int = 10

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.delta <= 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if not 0 < self.phi < 1:
            raise ConfigError(f"phi must be in (0, 1), got {self.phi}")
        if self.recluster_every < 1:
            raise ConfigError(f"recluster_every must be >= 1, got {self.recluster_every}")


@dataclass(frozen=True)
class AffinityMatrix:
    client_ids: Tuple[int, ...]
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "client_ids", tuple(int(c) for c in self.client_ids))
        scores = np.asarray(self.scores, dtype=np.float64)
        n = len(self.client_ids)
        if scores.shape != (n, n):
            raise ValueError(f"scores shape {scores.shape} does not match {n} client ids")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "_index", {cid: i for i, cid in enumerate(self.client_ids)})

    @property
    def size(self) -> int:
        return len(self.client_ids)

    def index(self, client_id: int) -> int:
        return self._index[client_id]

    def row(self, client_id: int) -> np.ndarray:
        return self.scores[self._index[client_id]]

    def rows(self, client_ids: Sequence[int]) -> np.ndarray:
        return self.scores[[self._index[c] for c in client_ids]]


@dataclass(frozen=True)
class ClusterAssignment:
    assignment: Dict[int, int]
    centroids: Dict[int, np.ndarray] = field(repr=False)
    wcss: float = 0.0

    @property
    def cluster_ids(self) -> List[int]:
        return sorted(set(self.assignment.values()))

    @property
    def num_clusters(self) -> int:
        return len(set(self.assignment.values()))

    def members(self, cluster_id: int) -> List[int]:
        return sorted(c for c, k in self.assignment.items() if k == cluster_id)

    def groups(self) -> Dict[int, List[int]]:
        return {k: self.members(k) for k in self.cluster_ids}

    def to_json(self, round_index: Optional[int] = None) -> dict:
        payload = {
            "members": {str(k): members for k, members in self.groups().items()},
            "wcss": self.wcss,
            "n_clusters": self.num_clusters,
        }
        if round_index is not None:
            payload = {"round": round_index, **payload}
        return payload


SELF_AFFINITY = 0.0


def affinity(ci: ClientState, cj: ClientState, gamma: float) -> float:
    """Hybrid dissimilarity of two clients (0 for identical data and parameters)."""
    data_term = jsd(ci.histogram, cj.histogram)
    model_term = (1.0 - cosine_similarity(ci.model.params, cj.model.params)) / 2.0
    return gamma * data_term + (1.0 - gamma) * model_term


def build_affinity_matrix(clients: Sequence[ClientState], gamma: float) -> AffinityMatrix:
    """
    Pairwise affinity for all clients at once.

    Matches affinity() entry by entry up to float rounding; the result is
    exactly symmetric with a zero diagonal.
    """
    if not clients:
        raise ValueError("affinity matrix needs at least one client")
    dists = np.stack([smoothed_distribution(c.histogram) for c in clients])
    mixture = 0.5 * (dists[:, None, :] + dists[None, :, :])
    data_term = 0.5 * (
        rel_entr(dists[:, None, :], mixture).sum(axis=-1) + rel_entr(dists[None, :, :], mixture).sum(axis=-1)
    )
    data_term = np.clip(data_term / np.log(LOG_BASE), 0.0, 1.0)

    params = np.stack([c.model.params for c in clients])
    if np.any(np.linalg.norm(params, axis=1) == 0.0):
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    model_term = np.zeros_like(data_term)
    if len(clients) > 1:
        model_term = np.clip(squareform(pdist(params, "cosine")), 0.0, 2.0) / 2.0

    scores = gamma * data_term + (1.0 - gamma) * model_term
    np.fill_diagonal(scores, SELF_AFFINITY)
    return AffinityMatrix(tuple(c.client_id for c in clients), scores)


def rank_clients(A: AffinityMatrix) -> List[int]:
    """Client ids by descending row L2 norm, ties by ascending id."""
    norms = np.sqrt(np.sum(A.scores**2, axis=1))
    order = sorted(range(A.size), key=lambda i: (-norms[i], A.client_ids[i]))
    return [A.client_ids[i] for i in order]


def _nearest(row: np.ndarray, centroids: Dict[int, np.ndarray]) -> Tuple[Optional[int], float]:
    best_id, best_dist = None, np.inf
    for cluster_id in sorted(centroids):
        dist = float(np.linalg.norm(row - centroids[cluster_id]))
        if dist < best_dist:
            best_id, best_dist = cluster_id, dist
    return best_id, best_dist


def _centroids(A: AffinityMatrix, groups: Dict[int, List[int]]) -> Dict[int, np.ndarray]:
    return {k: A.rows(members).mean(axis=0) for k, members in groups.items() if members}


def _sum_squares(A: AffinityMatrix, members: Sequence[int]) -> float:
    rows = A.rows(list(members))
    diff = rows - rows.mean(axis=0)
    return float(np.sum(diff * diff))


def assignment_from_groups(A: AffinityMatrix, groups: Dict[int, List[int]]) -> ClusterAssignment:
    groups = {k: sorted(m) for k, m in groups.items() if m}
    mapping = {c: k for k, members in groups.items() for c in members}
    total = sum(_sum_squares(A, members) for members in groups.values())
    return ClusterAssignment(mapping, _centroids(A, groups), total)


def threshold_cluster(A: AffinityMatrix, order: Sequence[int], delta: float) -> ClusterAssignment:
    """
    Sorted threshold clustering.

    The first client in order seeds cluster 0. Each next client joins the
    nearest running centroid when its distance is <= delta, otherwise it
    seeds a new cluster.
    """
    if sorted(order) != sorted(A.client_ids):
        raise ValueError("order must be a permutation of the matrix client ids")
    return assignment_from_groups(A, dict(enumerate(_threshold_in_rows(A, order, delta))))


def wcss(assign: ClusterAssignment, A: AffinityMatrix) -> float:
    """Within-cluster sum of squared row distances to the member-mean centroid."""
    return sum(_sum_squares(A, members) for members in assign.groups().values())


def wcss_bound(assign: ClusterAssignment, delta: float) -> float:
    """delta^2 * (n - m), the worst case for threshold clustering."""
    return delta**2 * (len(assign.assignment) - assign.num_clusters)


def cluster_variance(A: AffinityMatrix, members: Sequence[int]) -> float:
    """(1 / |C_k|) * sum of squared distances to the centroid."""
    return _sum_squares(A, members) / len(members)


def enforce_variance(assign: ClusterAssignment, A: AffinityMatrix, delta: float) -> ClusterAssignment:
    """
    Split clusters with Var_k > delta^2, then merge pairs that stay tight.

    A split re-runs threshold_cluster on the cluster's members in rank order;
    the first sub-cluster keeps the id. Two clusters merge (into the lower id)
    when their merged sum of squares is <= delta^2 * (|C_a| + |C_b| - 1),
    which keeps both Var_k <= delta^2 and the WCSS bound.

    The merge test is stricter than merged Var_k <= delta^2, which would
    allow a sum of squares up to delta^2 * (|C_a| + |C_b|). Two singletons
    at row distance d merge only when d <= sqrt(2) * delta, not 2 * delta.
    """
    limit = delta**2
    rank = {cid: pos for pos, cid in enumerate(rank_clients(A))}
    groups = assign.groups()
    next_id = max(groups) + 1 if groups else 0

    for cluster_id in sorted(groups):
        members = groups[cluster_id]
        if len(members) < 2 or cluster_variance(A, members) <= limit:
            continue
        # members keep their full affinity rows, so distances match the parent clustering
        sub = _threshold_in_rows(A, sorted(members, key=lambda c: rank[c]), delta)
        logger.info("split cluster %d (var above %.4g) into %d parts", cluster_id, limit, len(sub))
        groups[cluster_id] = sub[0]
        for part in sub[1:]:
            groups[next_id] = part
            next_id += 1

    merged = True
    while merged:
        merged = False
        ids = sorted(groups)
        for a_pos, a in enumerate(ids):
            for b in ids[a_pos + 1 :]:
                union = groups[a] + groups[b]
                if _sum_squares(A, union) <= limit * (len(union) - 1):
                    logger.info("merged cluster %d into %d", b, a)
                    groups[a] = sorted(union)
                    del groups[b]
                    merged = True
                    break
            if merged:
                break

    return assignment_from_groups(A, groups)


def _threshold_in_rows(A: AffinityMatrix, order: Sequence[int], delta: float) -> List[List[int]]:
    centroids: Dict[int, np.ndarray] = {}
    sums: Dict[int, np.ndarray] = {}
    groups: Dict[int, List[int]] = {}
    for client_id in order:
        row = A.row(client_id)
        nearest, dist = _nearest(row, centroids)
        if nearest is None or dist > delta:
            nearest = len(groups)
            sums[nearest] = np.zeros_like(row)
            groups[nearest] = []
        sums[nearest] = sums[nearest] + row
        groups[nearest].append(client_id)
        centroids[nearest] = sums[nearest] / len(groups[nearest])
    return [sorted(groups[k]) for k in sorted(groups)]


def detect_drift(old: Histogram, new: Histogram, phi: float) -> bool:
    """True iff JSD(old, new) > phi (strict)."""
    return jsd(old, new) > phi


def reassign_client(
    c: ClientState,
    assign: ClusterAssignment,
    A: AffinityMatrix,
    delta: float,
    cluster_models: Dict[int, Model],
) -> Tuple[ClusterAssignment, ClientState]:
    """
    Move one client to the nearest centroid within delta, or to a new singleton.

    Centroids are recomputed from A without the client. A singleton client
    that finds no cluster within delta keeps its own cluster. A moved client
    takes the destination cluster's model and a fresh momentum buffer; a new
    singleton keeps its own model. The reference histogram is reset to the
    current one in every case.

    Returns:
        (updated assignment, updated client)
    """
    current = assign.assignment[c.client_id]
    groups = assign.groups()
    others = {k: [m for m in members if m != c.client_id] for k, members in groups.items()}
    centroids = _centroids(A, others)
    nearest, dist = _nearest(A.row(c.client_id), centroids)

    if nearest is not None and dist <= delta:
        destination = nearest
    elif not others[current]:
        destination = current
    else:
        destination = max(groups) + 1

    client = replace(c, reference_histogram=c.histogram)
    if destination != current:
        others[destination] = others.get(destination, []) + [c.client_id]
        if destination in cluster_models:
            model = cluster_models[destination]
        else:
            model = c.model
        client = replace(
            client, model=model, velocity=np.zeros_like(model.params), cluster_id=destination
        )
        logger.info("client %d reassigned from cluster %d to %d", c.client_id, current, destination)
    else:
        others[current] = others[current] + [c.client_id]

    return assignment_from_groups(A, others), client


def recluster(clients: Sequence[ClientState], cfg: FdcConfig) -> Tuple[AffinityMatrix, ClusterAssignment]:
    """Full C-phase: affinity matrix, ranking, threshold clustering, variance control."""
    A = build_affinity_matrix(clients, cfg.gamma)
    assign = threshold_cluster(A, rank_clients(A), cfg.delta)
    return A, enforce_variance(assign, A, cfg.delta)


def relabel(assign: ClusterAssignment, mapping: Dict[int, int]) -> ClusterAssignment:
    return ClusterAssignment(
        {c: mapping[k] for c, k in assign.assignment.items()},
        {mapping[k]: v for k, v in assign.centroids.items()},
        assign.wcss,
    )


def match_clusters(previous: Dict[int, List[int]], assign: ClusterAssignment) -> ClusterAssignment:
    """
    Renumber a fresh assignment so clusters keep the id of the previous
    cluster they overlap most (Hungarian matching on member overlap).
    Unmatched clusters get ids above every previous id.
    """
    new_groups = assign.groups()
    old_ids = sorted(previous)
    new_ids = sorted(new_groups)
    if not old_ids:
        return assign
    overlap = np.zeros((len(new_ids), len(old_ids)))
    for i, k in enumerate(new_ids):
        members = set(new_groups[k])
        for j, old in enumerate(old_ids):
            overlap[i, j] = len(members.intersection(previous[old]))
    rows, cols = linear_sum_assignment(-overlap)
    mapping = {}
    for i, j in zip(rows, cols):
        if overlap[i, j] > 0:
            mapping[new_ids[i]] = old_ids[j]
    next_id = max(old_ids) + 1
    for k in new_ids:
        if k not in mapping:
            mapping[k] = next_id
            next_id += 1
    return relabel(assign, mapping)


def misclustering_rate(assign: ClusterAssignment, ground_truth: Dict[int, int]) -> float:
    """
    Fraction of clients outside the best one-to-one match between predicted
    and true clusters.
    """
    client_ids = sorted(assign.assignment)
    predicted = [assign.assignment[c] for c in client_ids]
    truth = [ground_truth[c] for c in client_ids]
    labels = sorted(set(predicted) | set(truth))
    confusion = confusion_matrix(truth, predicted, labels=labels)
    rows, cols = linear_sum_assignment(-confusion)
    matched = int(confusion[rows, cols].sum())
    return 1.0 - matched / len(client_ids)
