"""Learning rules: local training, edge aggregation, dynamic cloud aggregation, global-guided refinement."""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.data.data_utils import ClientData, ClusterTask, LabeledDataset, label_histogram
from utils.errors import ConfigError, DegenerateWeightsError, DimensionError, EmptyDataError
from utils.model.model_utils import Model, SgdConfig, accuracy, grad, loss, sgd_step
from utils.numerics.numerics_utils import Histogram, cosine_similarity, squared_l2

logger = logging.getLogger(__name__)

REFINE_MODES = ("proximal", "overwrite", "none")


@dataclass(frozen=True)
class ClientState:
    client_id: int
    train: LabeledDataset
    validation: LabeledDataset
    model: Model
    velocity: np.ndarray = field(repr=False)
    histogram: Histogram = field(repr=False)
    cluster_id: int = 0
    reference_histogram: Optional[Histogram] = field(default=None, repr=False)
    ground_truth_cluster: Optional[int] = None
    task: Optional[ClusterTask] = field(default=None, repr=False)
    last_loss: Optional[float] = None

    @property
    def data_size(self) -> int:
        return len(self.train)


@dataclass(frozen=True)
class ClusterState:
    cluster_id: int
    members: Tuple[int, ...]
    model: Model
    data_size: int
    val_accuracy: Optional[float] = None


@dataclass(frozen=True)
class GlobalState:
    model: Model
    round: int = 0


@dataclass(frozen=True)
class RefineConfig:
    lambda0: float = 0.1
    refine_lr: float = 0.05
    refine_steps: int = 20
    batch_size: int = 32
    mode: str = "proximal"
    loss_weight: float = 1.0

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ConfigError(f"lambda0 must be >= 0, got {self.lambda0}")
        if self.refine_lr <= 0:
            raise ConfigError(f"refine_lr must be > 0, got {self.refine_lr}")
        if self.refine_steps < 0:
            raise ConfigError(f"refine_steps must be >= 0, got {self.refine_steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mode not in REFINE_MODES:
            raise ConfigError(f"refine mode must be one of {REFINE_MODES}, got {self.mode!r}")


def make_client_state(data: ClientData, model: Model, num_classes: int, cluster_id: int = 0) -> ClientState:
    histogram = label_histogram(data.train, num_classes)
    return ClientState(
        client_id=data.client_id,
        train=data.train,
        validation=data.validation,
        model=model,
        velocity=np.zeros_like(model.params),
        histogram=histogram,
        cluster_id=cluster_id,
        reference_histogram=histogram,
        ground_truth_cluster=data.cluster,
        task=data.task,
    )


def local_train(
    c: ClientState,
    epochs: int,
    batch_size: int,
    sgd: SgdConfig,
    rng: np.random.Generator,
    learning_rate: Optional[float] = None,
    prox_center: Optional[Model] = None,
    prox_mu: float = 0.0,
) -> ClientState:
    """
    Mini-batch momentum SGD over the client's train shard (L-phase).

    Each epoch visits a fresh seeded shuffle. With prox_center set, the
    gradient of prox_mu * ||w - prox_center||^2 is added (FedProx-like).

    Returns:
        Updated client state; last_loss is the mean of per-epoch mean batch losses
    """
    n = len(c.train)
    if n == 0:
        raise EmptyDataError(f"client {c.client_id} has an empty train shard")
    if epochs <= 0:
        return c

    model = c.model
    velocity = c.velocity
    epoch_losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            features = c.train.features[idx]
            labels = c.train.labels[idx]
            batch_losses.append(loss(model, features, labels))
            g = grad(model, features, labels)
            if prox_center is not None and prox_mu > 0:
                g = g + 2.0 * prox_mu * (model.params - prox_center.params)
            model, velocity = sgd_step(model, g, sgd, velocity, learning_rate=learning_rate)
        epoch_losses.append(float(np.mean(batch_losses)))

    return replace(c, model=model, velocity=velocity, last_loss=float(np.mean(epoch_losses)))


def weighted_average(models: Sequence[Model], weights: Sequence[float]) -> Model:
    """Left-to-right accumulation of weight * params; every aggregator goes through here."""
    if not models:
        raise EmptyDataError("no models to average")
    if len(models) != len(weights):
        raise DimensionError(f"{len(models)} models but {len(weights)} weights")
    spec = models[0].spec
    acc = np.zeros(spec.num_params)
    for model, weight in zip(models, weights):
        if model.spec != spec:
            raise DimensionError(f"model spec mismatch: {model.spec} vs {spec}")
        acc = acc + float(weight) * model.params
    return Model(spec, acc)


def edge_aggregate(cluster: ClusterState, members: List[ClientState]) -> Model:
    """w_{e,k} = sum_i (|D_i| / |D_k|) w_i over the given members, summed in client-id order."""
    if not members:
        raise EmptyDataError(f"cluster {cluster.cluster_id}: no members to aggregate")
    outsiders = [m.client_id for m in members if m.client_id not in cluster.members]
    if outsiders:
        raise ValueError(f"clients {outsiders} are not members of cluster {cluster.cluster_id}")
    ordered = sorted(members, key=lambda m: m.client_id)
    sizes = np.array([m.data_size for m in ordered], dtype=np.float64)
    return weighted_average([m.model for m in ordered], sizes / sizes.sum())


def _sorted_clusters(clusters: Sequence[ClusterState]) -> List[ClusterState]:
    if not clusters:
        raise EmptyDataError("no clusters to aggregate")
    return sorted(clusters, key=lambda k: k.cluster_id)


def naive_weights(clusters: Sequence[ClusterState]) -> Dict[int, float]:
    """|D_k| / |D| per cluster id."""
    ordered = _sorted_clusters(clusters)
    sizes = np.array([k.data_size for k in ordered], dtype=np.float64)
    weights = sizes / sizes.sum()
    return {k.cluster_id: float(w) for k, w in zip(ordered, weights)}


def cloud_aggregate_naive(clusters: List[ClusterState]) -> Model:
    """Data-size-weighted mean of cluster models (HierFAVG cloud step)."""
    return cloud_aggregate_dynamic(clusters, naive_weights(clusters))


def compute_rho(
    clusters: List[ClusterState],
    w_g_prev: Optional[Model],
    lam: float,
) -> Dict[int, float]:
    """
    Dynamic cloud weights rho_k proportional to |D_k| * alpha_k * exp(-lam * ||w_{e,k} - w_g||^2).

    The distance uses the previous round's global model; without one (first
    A-phase) the naive size weights are returned. The exponent is shifted by
    the smallest squared distance, which leaves the normalized weights
    unchanged and keeps them from underflowing together. A cluster far
    behind the nearest one (lam * gap above ~745) can still round to 0.

    Raises:
        DegenerateWeightsError: some alpha_k is 0, which would drop that
            cluster from the global model; callers fall back to naive weights
    """
    ordered = _sorted_clusters(clusters)
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    if w_g_prev is None:
        return naive_weights(ordered)
    missing = [k.cluster_id for k in ordered if k.val_accuracy is None]
    if missing:
        raise ValueError(f"validation accuracy missing for clusters {missing}")

    sizes = np.array([k.data_size for k in ordered], dtype=np.float64)
    alphas = np.array([k.val_accuracy for k in ordered], dtype=np.float64)
    zero_alpha = [k.cluster_id for k, alpha in zip(ordered, alphas) if alpha <= 0.0]
    if zero_alpha:
        raise DegenerateWeightsError(f"clusters {zero_alpha} have zero validation accuracy")
    dist2 = np.array([squared_l2(k.model.params, w_g_prev.params) for k in ordered])
    numer = sizes * alphas * np.exp(-lam * (dist2 - dist2.min()))
    total = numer.sum()
    if not total > 0:
        raise DegenerateWeightsError("all dynamic aggregation weights are zero")
    weights = numer / total
    return {k.cluster_id: float(w) for k, w in zip(ordered, weights)}


def cloud_aggregate_dynamic(clusters: List[ClusterState], rho: Dict[int, float]) -> Model:
    """w_g = sum_k rho_k w_{e,k}, summed in cluster-id order."""
    ordered = _sorted_clusters(clusters)
    if sorted(rho) != [k.cluster_id for k in ordered]:
        raise DimensionError(f"weights for clusters {sorted(rho)} do not match {[k.cluster_id for k in ordered]}")
    return weighted_average([k.model for k in ordered], [rho[k.cluster_id] for k in ordered])


def divergence_aware_lambda(w_ek: Model, w_g: Model, lambda0: float) -> float:
    """lambda_k = lambda0 / (1 + div), div = 1 - cos(w_{e,k}, w_g) in [0, 2]."""
    div = 1.0 - cosine_similarity(w_ek.params, w_g.params)
    return lambda0 / (1.0 + div)


def refinement_objective(
    model: Model,
    w_g: Model,
    lam_k: float,
    features: np.ndarray,
    labels: np.ndarray,
    loss_weight: float = 1.0,
) -> float:
    """loss_weight * L(w; batch) + lam_k * ||w - w_g||^2."""
    value = lam_k * squared_l2(model.params, w_g.params)
    if loss_weight != 0.0:
        value += loss_weight * loss(model, features, labels)
    return value


def refinement_gradient(
    model: Model,
    w_g: Model,
    lam_k: float,
    features: np.ndarray,
    labels: np.ndarray,
    loss_weight: float = 1.0,
) -> np.ndarray:
    g = 2.0 * lam_k * (model.params - w_g.params)
    if loss_weight != 0.0:
        g = g + loss_weight * grad(model, features, labels)
    return g


def refine_cluster(
    cluster: ClusterState,
    w_g: Model,
    cfg: RefineConfig,
    cluster_data: LabeledDataset,
    rng: np.random.Generator,
) -> Model:
    """
    Global-guided refinement of a cluster model by plain gradient descent.

    Each of cfg.refine_steps steps samples a mini-batch of cluster_data
    without replacement and applies
    w <- w - refine_lr * (loss_weight * grad L + 2 * lambda_k * (w - w_g)),
    with lambda_k from divergence_aware_lambda on the starting model.
    """
    if cfg.refine_steps == 0:
        return cluster.model
    n = len(cluster_data)
    if n == 0:
        raise EmptyDataError(f"cluster {cluster.cluster_id}: no data for refinement")

    lam_k = divergence_aware_lambda(cluster.model, w_g, cfg.lambda0)
    model = cluster.model
    batch = min(cfg.batch_size, n)
    for _ in range(cfg.refine_steps):
        idx = rng.choice(n, size=batch, replace=False)
        g = refinement_gradient(
            model, w_g, lam_k, cluster_data.features[idx], cluster_data.labels[idx], cfg.loss_weight
        )
        model = model.with_params(model.params - cfg.refine_lr * g)
    logger.debug("refined cluster %d with lambda_k=%.6g", cluster.cluster_id, lam_k)
    return model


def pooled_train(members: Sequence[ClientState]) -> LabeledDataset:
    """Union of member train shards in client-id order (edge-side proxy for D_k)."""
    ordered = sorted(members, key=lambda m: m.client_id)
    return LabeledDataset.concat([m.train for m in ordered])


def pooled_validation(members: Sequence[ClientState]) -> LabeledDataset:
    ordered = sorted(members, key=lambda m: m.client_id)
    return LabeledDataset.concat([m.validation for m in ordered])


def cluster_val_accuracy(model: Model, members: Sequence[ClientState]) -> float:
    """alpha_k: accuracy on the union of member validation shards."""
    val = pooled_validation(members)
    return accuracy(model, val.features, val.labels)
