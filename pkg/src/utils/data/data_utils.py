"""Synthetic cluster tasks, Dirichlet non-IID partitioning, drift injection and label histograms."""

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from utils.errors import ConfigError, DimensionError, PartitionError, SerializationError, UnknownDriftKindError
from utils.model.model_utils import ModelSpec
from utils.numerics.numerics_utils import Histogram, make_rng

if TYPE_CHECKING:
    from utils.fedcore.fedcore_utils import ClientState

DRIFT_KINDS = ("label-permutation", "label-subset-switch", "feature-shift")
DATASET_MAGIC = b"CFLD"
DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise DimensionError(f"{features.shape[0]} rows but labels shape {labels.shape}")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative class ids")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.labels[indices])

    @staticmethod
    def empty(input_dim: int) -> "LabeledDataset":
        return LabeledDataset(np.zeros((0, input_dim)), np.zeros(0, dtype=np.int64))

    @staticmethod
    def concat(datasets: Sequence["LabeledDataset"]) -> "LabeledDataset":
        if not datasets:
            raise ValueError("nothing to concatenate")
        return LabeledDataset(
            np.concatenate([d.features for d in datasets], axis=0),
            np.concatenate([d.labels for d in datasets]),
        )


@dataclass(frozen=True)
class ClusterTask:
    """Gaussian-mixture classification task: one mean per class, shared noise_std^2 * I."""

    cluster_id: int
    means: np.ndarray = field(repr=False)
    noise_std: float = 1.0

    @property
    def num_classes(self) -> int:
        return int(self.means.shape[0])

    def sample(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        noise = rng.standard_normal((labels.size, self.means.shape[1]))
        return self.means[labels] + self.noise_std * noise

    def sample_dataset(self, labels: np.ndarray, rng: np.random.Generator) -> LabeledDataset:
        return LabeledDataset(self.sample(labels, rng), labels)


@dataclass(frozen=True)
class PartitionConfig:
    num_clients: int
    dirichlet_alpha: float = 0.5
    samples_per_client: Tuple[int, int] = (50, 200)
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.dirichlet_alpha <= 0:
            raise ConfigError(f"dirichlet_alpha must be > 0, got {self.dirichlet_alpha}")
        object.__setattr__(self, "samples_per_client", tuple(int(n) for n in self.samples_per_client))
        low, high = self.samples_per_client
        if low < 2 or high < low:
            raise ConfigError(f"samples_per_client must satisfy 2 <= min <= max, got {self.samples_per_client}")
        if not 0 < self.validation_fraction <= 0.5:
            raise ConfigError(f"validation_fraction must be in (0, 0.5], got {self.validation_fraction}")


@dataclass(frozen=True)
class ClientShard:
    client_index: int
    train: LabeledDataset
    validation: LabeledDataset
    pool_indices: np.ndarray = field(repr=False)


def select_affected_clients(num_clients: int, fraction: float, seed: int, round_index: int) -> Tuple[int, ...]:
    """round(fraction * n) clients (at least one), drawn per (seed, round)."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"affected fraction must be in (0, 1], got {fraction}")
    count = max(1, round(fraction * num_clients))
    if count >= num_clients:
        return tuple(range(num_clients))
    chosen = make_rng(seed, "drift-clients", round_index).choice(num_clients, size=count, replace=False)
    return tuple(sorted(int(c) for c in chosen))


@dataclass(frozen=True)
class DriftEvent:
    """
    A scheduled change of client data.

    Either affected_clients lists the clients explicitly, or fraction names
    the share of clients to draw; drawn events are resolved per run seed by
    resolve().
    """

    round: int
    kind: str
    affected_clients: Tuple[int, ...] = ()
    parameters: Dict[str, Any] = field(default_factory=dict)
    fraction: Optional[float] = None

    def __post_init__(self):
        if self.round < 1:
            raise ConfigError(f"drift round must be >= 1, got {self.round}")
        object.__setattr__(self, "affected_clients", tuple(int(c) for c in self.affected_clients))
        if self.fraction is not None:
            if not 0 < self.fraction <= 1:
                raise ConfigError(f"affected fraction must be in (0, 1], got {self.fraction}")
            if self.affected_clients:
                raise ConfigError("drift event takes affected clients or a fraction, not both")
        elif not self.affected_clients:
            raise ConfigError("drift event must affect at least one client")

    @property
    def resolved(self) -> bool:
        return self.fraction is None

    def resolve(self, num_clients: int, seed: int) -> "DriftEvent":
        """Event with the drawn clients filled in; explicit events are returned as is."""
        if self.resolved:
            return self
        clients = select_affected_clients(num_clients, self.fraction, seed, self.round)
        return replace(self, affected_clients=clients, fraction=None)


@dataclass(frozen=True)
class DataConfig:
    num_clients: int = 100
    num_clusters: int = 4
    dirichlet_alpha: float = 0.5
    samples_per_client: Tuple[int, int] = (50, 200)
    validation_fraction: float = 0.1
    class_sep: float = 3.0
    noise_std: float = 1.0
    per_cluster_sep: float = 1.5
    label_subset: Optional[Tuple[int, ...]] = None
    pool_factor: float = 1.5
    label_conflict: float = 0.3

    def __post_init__(self):
        if self.num_clusters < 1:
            raise ConfigError(f"num_clusters must be >= 1, got {self.num_clusters}")
        if self.num_clients < self.num_clusters:
            raise ConfigError("num_clients must be >= num_clusters")
        if self.noise_std <= 0:
            raise ConfigError(f"noise_std must be > 0, got {self.noise_std}")
        if self.pool_factor < 1:
            raise ConfigError(f"pool_factor must be >= 1, got {self.pool_factor}")
        if not 0 <= self.label_conflict <= 1:
            raise ConfigError(f"label_conflict must be in [0, 1], got {self.label_conflict}")
        object.__setattr__(self, "samples_per_client", tuple(int(n) for n in self.samples_per_client))
        if self.label_subset is not None:
            object.__setattr__(self, "label_subset", tuple(int(c) for c in self.label_subset))
        # reuses PartitionConfig's range checks
        PartitionConfig(self.num_clients, self.dirichlet_alpha, tuple(self.samples_per_client), self.validation_fraction)


@dataclass(frozen=True)
class ClientData:
    client_id: int
    cluster: int
    train: LabeledDataset
    validation: LabeledDataset
    task: ClusterTask


@dataclass(frozen=True)
class Federation:
    tasks: List[ClusterTask]
    clients: List[ClientData]


def _random_rotation(dim: int, strength: float, rng: np.random.Generator) -> np.ndarray:
    """expm(strength * S) for a random skew-symmetric S with spectral norm 1."""
    raw = rng.standard_normal((dim, dim))
    skew = raw - raw.T
    norm = np.linalg.norm(skew, 2)
    if norm == 0.0 or strength == 0.0:
        return np.eye(dim)
    return expm(strength * skew / norm)


def _conflicting_classes(num_classes: int, label_conflict: float, rng: np.random.Generator) -> np.ndarray:
    """Classes whose means trade places in one cluster (empty when there is no conflict)."""
    if label_conflict <= 0.0:
        return np.zeros(0, dtype=np.int64)
    count = min(num_classes, max(2, int(round(label_conflict * num_classes))))
    return np.sort(rng.choice(num_classes, size=count, replace=False))


def generate_cluster_tasks(
    num_clusters: int,
    per_cluster_sep: float,
    spec: ModelSpec,
    rng: np.random.Generator,
    class_sep: float = 3.0,
    noise_std: float = 1.0,
    label_conflict: float = 0.0,
) -> List[ClusterTask]:
    """
    Build one Gaussian-mixture task per cluster.

    A centered constellation of class means is drawn once; cluster 0 uses it
    as is and every other cluster rotates it by angle per_cluster_sep in a
    random set of planes, so per_cluster_sep = 0 gives identical tasks. With
    label_conflict > 0 each other cluster also picks that share of the
    classes (at least two) and cycles their means, so the same region of
    feature space carries a different label in different clusters.

    Args:
        num_clusters: Number of tasks K
        per_cluster_sep: Rotation angle (radians) between cluster 0 and the others
        spec: Model spec supplying input_dim and num_classes
        rng: Generator owned by the caller
        class_sep: Scale of the class-mean constellation
        noise_std: Per-coordinate standard deviation around each mean
        label_conflict: Share of classes whose means are cycled per cluster, in [0, 1]

    Returns:
        List of K ClusterTask objects
    """
    if num_clusters < 1:
        raise ConfigError(f"num_clusters must be >= 1, got {num_clusters}")
    if not 0 <= label_conflict <= 1:
        raise ConfigError(f"label_conflict must be in [0, 1], got {label_conflict}")
    base = class_sep * rng.standard_normal((spec.num_classes, spec.input_dim))
    base -= base.mean(axis=0, keepdims=True)

    tasks = [ClusterTask(0, base, noise_std)]
    for k in range(1, num_clusters):
        rotation = _random_rotation(spec.input_dim, per_cluster_sep, rng)
        means = base @ rotation.T
        cycled = _conflicting_classes(spec.num_classes, label_conflict, rng)
        if cycled.size:
            means[cycled] = means[np.roll(cycled, 1)]
        tasks.append(ClusterTask(k, means, noise_std))
    return tasks


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        # stable sort keeps ties in class order
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def _draw_proportions(alpha: float, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    proportions = rng.dirichlet(np.full(num_classes, alpha))
    if not np.all(np.isfinite(proportions)) or proportions.sum() <= 0:
        proportions = np.full(num_classes, 1.0 / num_classes)
    return proportions


def dirichlet_partition(
    pool: LabeledDataset,
    cfg: PartitionConfig,
    rng: np.random.Generator,
) -> List[ClientShard]:
    """
    Split a pool into disjoint per-client shards with Dirichlet label skew.

    Each client draws a size from samples_per_client and class proportions
    from Dirichlet(alpha * 1) over the classes present in the pool. Counts use
    largest-remainder rounding; exhausted classes are topped up from the
    remaining classes in descending proportion order.

    Args:
        pool: Examples to distribute
        cfg: Partition settings
        rng: Generator owned by the caller

    Returns:
        One ClientShard per client, in client order
    """
    low, high = cfg.samples_per_client
    sizes = rng.integers(low, high + 1, size=cfg.num_clients)
    if int(sizes.sum()) > len(pool):
        raise PartitionError(
            f"pool has {len(pool)} examples but {cfg.num_clients} clients need {int(sizes.sum())}"
        )

    classes = np.unique(pool.labels)
    available = [list(rng.permutation(np.flatnonzero(pool.labels == c))) for c in classes]
    cursors = np.zeros(len(classes), dtype=np.int64)
    remaining = np.array([len(a) for a in available], dtype=np.int64)

    shards = []
    for client_index, size in enumerate(sizes):
        size = int(size)
        proportions = _draw_proportions(cfg.dirichlet_alpha, len(classes), rng)
        desired = _largest_remainder(proportions, size)
        take = np.minimum(desired, remaining)
        deficit = size - int(take.sum())
        if deficit > 0:
            for c in np.argsort(-proportions, kind="stable"):
                extra = min(deficit, int(remaining[c] - take[c]))
                take[c] += extra
                deficit -= extra
                if deficit == 0:
                    break
        if deficit > 0:
            raise PartitionError(f"pool exhausted while filling client {client_index}")

        picked = []
        for c, count in enumerate(take):
            start = int(cursors[c])
            picked.extend(available[c][start : start + int(count)])
            cursors[c] += count
            remaining[c] -= count
        picked = np.asarray(rng.permutation(np.asarray(picked, dtype=np.int64)), dtype=np.int64)

        n_val = min(size - 1, max(1, int(round(cfg.validation_fraction * size))))
        shards.append(
            ClientShard(
                client_index=client_index,
                train=pool.subset(picked[n_val:]),
                validation=pool.subset(picked[:n_val]),
                pool_indices=np.sort(picked),
            )
        )
    return shards


def label_histogram(d: LabeledDataset, num_classes: int) -> Histogram:
    """Per-class label counts."""
    if len(d) == 0:
        return np.zeros(num_classes, dtype=np.int64)
    if d.labels.min() < 0 or d.labels.max() >= num_classes:
        raise ValueError(f"label out of range [0, {num_classes})")
    return np.bincount(d.labels, minlength=num_classes).astype(np.int64)


def _relabel(
    dataset: LabeledDataset,
    mapping: np.ndarray,
    task: Optional[ClusterTask],
    rng: np.random.Generator,
) -> LabeledDataset:
    new_labels = mapping[dataset.labels]
    if task is None:
        return LabeledDataset(dataset.features, new_labels)
    changed = np.flatnonzero(new_labels != dataset.labels)
    features = dataset.features.copy()
    if changed.size:
        features[changed] = task.sample(new_labels[changed], rng)
    return LabeledDataset(features, new_labels)


def apply_drift(client: "ClientState", event: DriftEvent, rng: np.random.Generator) -> "ClientState":
    """
    Replace a client's shards according to a drift event.

    label-permutation remaps every label through parameters["permutation"].
    label-subset-switch maps parameters["source"][i] -> parameters["target"][i];
    features of switched examples are redrawn from the client's task when one
    is attached (set parameters["resample_features"] = False to keep them).
    feature-shift adds parameters["shift"] (a vector, or a scalar magnitude
    along a random unit direction) to every feature row.

    Returns:
        A new ClientState with updated shards and histogram
    """
    if not event.resolved:
        raise ValueError("drift event clients are unresolved; call event.resolve(num_clients, seed) first")
    if client.client_id not in event.affected_clients:
        raise ValueError(f"drift event does not target client {client.client_id}")
    num_classes = int(client.histogram.shape[0])
    params = event.parameters

    if event.kind == "label-permutation":
        mapping = np.asarray(params["permutation"], dtype=np.int64)
        if sorted(mapping.tolist()) != list(range(num_classes)):
            raise ValueError(f"permutation must reorder range({num_classes}), got {mapping.tolist()}")
        train = _relabel(client.train, mapping, None, rng)
        validation = _relabel(client.validation, mapping, None, rng)
    elif event.kind == "label-subset-switch":
        source = [int(c) for c in params["source"]]
        target = [int(c) for c in params["target"]]
        if len(source) != len(target):
            raise ValueError("source and target label subsets must have equal length")
        mapping = np.arange(num_classes, dtype=np.int64)
        mapping[source] = target
        task = client.task if params.get("resample_features", True) else None
        train = _relabel(client.train, mapping, task, rng)
        validation = _relabel(client.validation, mapping, task, rng)
    elif event.kind == "feature-shift":
        shift = params["shift"]
        if np.ndim(shift) == 0:
            direction = rng.standard_normal(client.train.input_dim)
            shift = float(shift) * direction / np.linalg.norm(direction)
        shift = np.asarray(shift, dtype=np.float64)
        if shift.shape != (client.train.input_dim,):
            raise DimensionError(f"shift must have length {client.train.input_dim}")
        train = LabeledDataset(client.train.features + shift, client.train.labels)
        validation = LabeledDataset(client.validation.features + shift, client.validation.labels)
    else:
        raise UnknownDriftKindError(f"unknown drift kind {event.kind!r}; expected one of {DRIFT_KINDS}")

    return replace(client, train=train, validation=validation, histogram=label_histogram(train, num_classes))


def build_federation(data_cfg: DataConfig, spec: ModelSpec, seed: int) -> Federation:
    """
    Generate tasks, pools and client shards for a whole run.

    Client i belongs to ground-truth cluster i % num_clusters. Each cluster's
    pool is class-balanced (over label_subset when set) and sized
    pool_factor times its clients' maximum demand.
    """
    tasks = generate_cluster_tasks(
        data_cfg.num_clusters,
        data_cfg.per_cluster_sep,
        spec,
        make_rng(seed, "tasks"),
        class_sep=data_cfg.class_sep,
        noise_std=data_cfg.noise_std,
        label_conflict=data_cfg.label_conflict,
    )
    classes = np.asarray(
        data_cfg.label_subset if data_cfg.label_subset is not None else range(spec.num_classes),
        dtype=np.int64,
    )
    if classes.size == 0 or classes.min() < 0 or classes.max() >= spec.num_classes:
        raise ConfigError(f"label_subset must name classes in [0, {spec.num_classes})")

    clients: Dict[int, ClientData] = {}
    for task in tasks:
        member_ids = list(range(task.cluster_id, data_cfg.num_clients, data_cfg.num_clusters))
        demand = len(member_ids) * data_cfg.samples_per_client[1]
        per_class = int(math.ceil(data_cfg.pool_factor * demand / classes.size))
        pool_rng = make_rng(seed, "pool", task.cluster_id)
        pool = task.sample_dataset(np.repeat(classes, per_class), pool_rng)
        shards = dirichlet_partition(
            pool,
            PartitionConfig(
                num_clients=len(member_ids),
                dirichlet_alpha=data_cfg.dirichlet_alpha,
                samples_per_client=tuple(data_cfg.samples_per_client),
                validation_fraction=data_cfg.validation_fraction,
            ),
            make_rng(seed, "partition", task.cluster_id),
        )
        for client_id, shard in zip(member_ids, shards):
            clients[client_id] = ClientData(client_id, task.cluster_id, shard.train, shard.validation, task)

    return Federation(tasks=tasks, clients=[clients[i] for i in sorted(clients)])


def save_dataset(path: Path, dataset: LabeledDataset, num_classes: int) -> Path:
    """Columnar binary export: header, float64 row-major features, int32 labels."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(dataset), dataset.input_dim, num_classes)
    body = dataset.features.astype("<f8").tobytes() + dataset.labels.astype("<i4").tobytes()
    path.write_bytes(header + body)
    return path


def load_dataset(path: Path) -> Tuple[LabeledDataset, int]:
    data = Path(path).read_bytes()
    if len(data) < _DATASET_HEADER.size:
        raise SerializationError("file shorter than dataset header")
    magic, version, rows, dim, num_classes = _DATASET_HEADER.unpack_from(data, 0)
    if magic != DATASET_MAGIC or version != DATASET_VERSION:
        raise SerializationError(f"unsupported dataset file (magic={magic!r}, version={version})")
    feature_bytes = rows * dim * 8
    offset = _DATASET_HEADER.size
    if len(data) != offset + feature_bytes + rows * 4:
        raise SerializationError("dataset body size does not match header")
    features = np.frombuffer(data, dtype="<f8", count=rows * dim, offset=offset).reshape(rows, dim)
    labels = np.frombuffer(data, dtype="<i4", count=rows, offset=offset + feature_bytes)
    return LabeledDataset(features.astype(np.float64), labels.astype(np.int64)), int(num_classes)
