"""Round loop for CFLHKD and its baselines.

Per round: drift events, participant sampling, participant sync, local
training, and on edge rounds the edge aggregation of that round's
participants followed (cloud rounds only) by the cloud aggregation and
cluster refinement. Client clustering runs last.

Models reach clients only when they participate: a sampled client whose
copy is older than its cluster's current model downloads it before
training. Non-participants never have their model touched, so a client
moved by reclustering picks up its new cluster model (and a fresh momentum
buffer) the next time it is sampled.

Every random draw comes from make_rng(seed, purpose, round, ...), so a run
is a pure function of its config.
"""

import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.data.data_utils import DataConfig, DriftEvent, apply_drift, build_federation
from utils.errors import ConfigError, DegenerateWeightsError
from utils.fdc.fdc_utils import (
    AffinityMatrix,
    ClusterAssignment,
    FdcConfig,
    assignment_from_groups,
    build_affinity_matrix,
    detect_drift,
    match_clusters,
    misclustering_rate,
    reassign_client,
    recluster,
)
from utils.fedcore.fedcore_utils import (
    ClientState,
    ClusterState,
    RefineConfig,
    cloud_aggregate_dynamic,
    cluster_val_accuracy,
    compute_rho,
    edge_aggregate,
    local_train,
    make_client_state,
    naive_weights,
    pooled_train,
    pooled_validation,
    refine_cluster,
    weighted_average,
)
from utils.model.model_utils import Model, ModelSpec, SgdConfig, init_model, serialized_size
from utils.numerics.numerics_utils import make_rng
from utils.report.report_utils import (
    DriftMetrics,
    RoundMetrics,
    divergence_diagnostics,
    eval_accuracy,
    objectives,
    rounds_to_target,
)
from utils.sim.comm_utils import CommLedger, account_comm

logger = logging.getLogger(__name__)

METHODS = ("cflhkd", "fedavg", "fedprox", "hierfavg", "staticcfl", "standalone")
INITIAL_CLUSTERINGS = ("fdc", "random")

# (edge_every, cloud_every) when the config leaves them unset
METHOD_INTERVALS: Dict[str, Tuple[Optional[int], Optional[int]]] = {
    "cflhkd": (10, 30),
    "hierfavg": (5, 20),
    "staticcfl": (10, None),
    "fedavg": (1, None),
    "fedprox": (1, None),
    "standalone": (None, None),
}
_GLOBAL_METHODS = ("cflhkd", "hierfavg", "fedavg", "fedprox")
_CLOUD_METHODS = ("cflhkd", "hierfavg")
_SINGLE_MODEL_METHODS = ("fedavg", "fedprox")


@dataclass(frozen=True)
class AblationConfig:
    dynamic_weights: bool = True
    dynamic_clustering: bool = True
    force_unit_alpha: bool = False
    bilevel_aggregation: bool = True


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    rounds: int = 100
    method: str = "cflhkd"
    participation_fraction: float = 0.3
    local_epochs: int = 5
    batch_size: int = 32
    edge_every: Optional[int] = None
    cloud_every: Optional[int] = None
    initial_clusters: int = 4
    initial_clustering: Optional[str] = None
    cloud_lambda: float = 0.1
    prox_mu: float = 0.01
    target_accuracy: float = 0.8
    drift_tolerance_pp: float = 0.5
    workers: int = 1
    model: ModelSpec = field(default_factory=lambda: ModelSpec(10, 10))
    data: DataConfig = field(default_factory=DataConfig)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    fdc: FdcConfig = field(default_factory=FdcConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    drift: Tuple[DriftEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "drift", tuple(self.drift))
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if not 0 < self.participation_fraction <= 1:
            raise ConfigError(f"participation_fraction must be in (0, 1], got {self.participation_fraction}")
        if self.local_epochs < 0:
            raise ConfigError(f"local_epochs must be >= 0, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("edge_every", "cloud_every"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        edge, cloud = self.intervals
        if cloud is not None and (edge is None or cloud % edge != 0):
            raise ConfigError(f"cloud_every ({cloud}) must be a multiple of edge_every ({edge})")
        if self.initial_clustering is not None and self.initial_clustering not in INITIAL_CLUSTERINGS:
            raise ConfigError(f"initial_clustering must be one of {INITIAL_CLUSTERINGS}")
        if self.initial_clusters < 1:
            raise ConfigError(f"initial_clusters must be >= 1, got {self.initial_clusters}")
        if self.cloud_lambda < 0:
            raise ConfigError(f"cloud_lambda must be >= 0, got {self.cloud_lambda}")
        if self.prox_mu < 0:
            raise ConfigError(f"prox_mu must be >= 0, got {self.prox_mu}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        for event in self.drift:
            outside = [c for c in event.affected_clients if not 0 <= c < self.data.num_clients]
            if outside:
                raise ConfigError(f"drift event at round {event.round} targets unknown clients {outside}")

    @property
    def num_clients(self) -> int:
        return self.data.num_clients

    @property
    def intervals(self) -> Tuple[Optional[int], Optional[int]]:
        """Resolved (edge_every, cloud_every); None means the phase never runs."""
        preset_edge, preset_cloud = METHOD_INTERVALS[self.method]
        if self.method == "standalone":
            return None, None
        edge = self.edge_every if self.edge_every is not None else preset_edge
        if self.method not in _CLOUD_METHODS:
            return edge, None
        cloud = self.cloud_every if self.cloud_every is not None else preset_cloud
        return edge, cloud

    @property
    def clustering(self) -> str:
        """How round-0 groups are formed: fdc, random, single or singleton."""
        if self.method in _SINGLE_MODEL_METHODS:
            return "single"
        if self.method == "standalone":
            return "singleton"
        if self.initial_clustering is not None:
            return self.initial_clustering
        return "random" if self.method == "hierfavg" else "fdc"


@dataclass
class RunArtifacts:
    config: SimConfig
    metrics: List[RoundMetrics]
    events: List[dict]
    ledger: CommLedger
    clients: Dict[int, ClientState]
    clusters: Dict[int, ClusterState]
    global_model: Optional[Model]
    wall_clock_seconds: float = 0.0
    drift: Optional[DriftMetrics] = None

    def accuracy_series(self) -> List[float]:
        """Primary accuracy per round (mean cluster-model accuracy)."""
        return [m.mean_cluster_acc for m in self.metrics]

    def final_models(self) -> Dict[str, Model]:
        models = {f"cluster_{k}": cluster.model for k, cluster in sorted(self.clusters.items())}
        if self.global_model is not None:
            models = {"global": self.global_model, **models}
        return models

    def summary(self) -> dict:
        last = self.metrics[-1] if self.metrics else None
        summary = {
            "method": self.config.method,
            "seed": self.config.seed,
            "rounds": self.config.rounds,
            "final_mean_cluster_acc": last.mean_cluster_acc if last else None,
            "final_global_acc": last.global_acc if last else None,
            "n_clusters": len(self.clusters),
            "rounds_to_target": rounds_to_target(self.accuracy_series(), self.config.target_accuracy),
            "comm_client_edge_units": self.ledger.total_units("client_edge"),
            "comm_edge_cloud_units": self.ledger.total_units("edge_cloud"),
            "comm_client_cloud_units": self.ledger.total_units("client_cloud"),
            "wall_clock_seconds": self.wall_clock_seconds,
        }
        if self.drift is not None:
            summary["drift_drop_pp"] = self.drift.drop_pp
            summary["drift_recovery_rounds"] = self.drift.recovery_rounds
        return summary


def sample_participants(client_ids: Sequence[int], fraction: float, rng: np.random.Generator) -> List[int]:
    """ceil(fraction * n) distinct clients, returned in ascending id order."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    ids = sorted(client_ids)
    # absorbs float error such as 0.3 * 100 = 30.000000000000004
    count = max(1, math.ceil(round(fraction * len(ids), 9)))
    if count >= len(ids):
        return ids
    chosen = rng.choice(len(ids), size=count, replace=False)
    return sorted(ids[i] for i in chosen)


class _RoundLoop:
    def __init__(self, config: SimConfig):
        self.config = config
        self.spec = config.model
        self.model_bytes = serialized_size(self.spec)
        self.edge_every, self.cloud_every = config.intervals
        self.ledger = CommLedger()
        self.events: List[dict] = []
        self.metrics: List[RoundMetrics] = []
        self.affinity: Optional[AffinityMatrix] = None
        self.wcss: Optional[float] = None
        self.w_g_prev: Optional[Model] = None
        self.drift = tuple(event.resolve(config.num_clients, config.seed) for event in config.drift)

        federation = build_federation(config.data, self.spec, config.seed)
        initial = init_model(self.spec, make_rng(config.seed, "init"))
        self.clients: Dict[int, ClientState] = {
            data.client_id: make_client_state(data, initial, self.spec.num_classes) for data in federation.clients
        }
        self.global_model: Optional[Model] = initial if config.method in _GLOBAL_METHODS else None

        groups = self._initial_groups()
        for k, members in groups.items():
            for c in members:
                self.clients[c] = replace(self.clients[c], cluster_id=k)
        self.clusters = self._build_clusters(groups, {k: initial for k in groups})

        # every cluster model change gets a fresh version; clients remember the (cluster, version) they hold
        self._version_counter = itertools.count(1)
        self.versions: Dict[int, int] = {k: 0 for k in self.clusters}
        self.held: Dict[int, Tuple[int, Optional[int]]] = {c: (self.clients[c].cluster_id, 0) for c in self.clients}
        self._log_event(0, "clusters_initialized", mode=config.clustering, groups=_jsonable_groups(groups))

    @property
    def client_ids(self) -> List[int]:
        return sorted(self.clients)

    @property
    def bilevel(self) -> bool:
        """False when cluster models live at the cloud and clients talk to it directly."""
        return self.config.method not in _SINGLE_MODEL_METHODS and self.config.ablation.bilevel_aggregation

    @property
    def client_link(self) -> str:
        return "client_edge" if self.bilevel else "client_cloud"

    def _new_version(self, cluster_id: int) -> None:
        self.versions[cluster_id] = next(self._version_counter)

    def _log_event(self, round_index: int, event_type: str, **payload) -> None:
        event = {"round": round_index, "type": event_type, **payload}
        self.events.append(event)
        logger.info("round %d %s %s", round_index, event_type, payload)

    def _initial_groups(self) -> Dict[int, List[int]]:
        ids = self.client_ids
        mode = self.config.clustering
        if mode == "single":
            return {0: ids}
        if mode == "singleton":
            return {c: [c] for c in ids}
        if mode == "random":
            num_groups = min(self.config.initial_clusters, len(ids))
            order = make_rng(self.config.seed, "random-clusters").permutation(len(ids))
            groups: Dict[int, List[int]] = {k: [] for k in range(num_groups)}
            for position, index in enumerate(order):
                groups[position % num_groups].append(ids[index])
            return {k: sorted(members) for k, members in groups.items()}
        A, assign = recluster([self.clients[c] for c in ids], self.config.fdc)
        self.affinity, self.wcss = A, assign.wcss
        return assign.groups()

    def _build_clusters(self, groups: Dict[int, List[int]], models: Dict[int, Model]) -> Dict[int, ClusterState]:
        clusters = {}
        for k in sorted(groups):
            members = tuple(sorted(groups[k]))
            size = sum(self.clients[c].data_size for c in members)
            clusters[k] = ClusterState(k, members, models[k], size)
        return clusters

    def _download(self, round_index: int, link: str) -> None:
        account_comm(self.ledger, "download", link, self.model_bytes, round_index)

    def _upload(self, round_index: int, link: str) -> None:
        account_comm(self.ledger, "upload", link, self.model_bytes, round_index)

    def inject_drift(self, t: int) -> None:
        due = [event for event in self.drift if event.round == t]
        for event in due:
            for c in sorted(event.affected_clients):
                rng = make_rng(self.config.seed, "drift", t, c)
                self.clients[c] = apply_drift(self.clients[c], event, rng)
            self._log_event(t, "drift_applied", kind=event.kind, clients=list(event.affected_clients))
        if due:
            groups = {k: list(cluster.members) for k, cluster in self.clusters.items()}
            models = {k: cluster.model for k, cluster in self.clusters.items()}
            self.clusters = self._build_clusters(groups, models)

    def sync_phase(self, t: int, participants: List[int]) -> None:
        """Participants holding an outdated copy download their cluster's current model."""
        for c in participants:
            client = self.clients[c]
            k = client.cluster_id
            current = (k, self.versions[k])
            if self.held[c] == current:
                continue
            model = self.clusters[k].model
            velocity = client.velocity if self.held[c][0] == k else np.zeros_like(model.params)
            self.clients[c] = replace(client, model=model, velocity=velocity)
            self.held[c] = current
            self._download(t, self.client_link)

    def local_phase(self, t: int, participants: List[int]) -> None:
        config = self.config
        lr = config.sgd.lr_at(t)
        prox_center = self.global_model if config.method == "fedprox" else None
        prox_mu = config.prox_mu if prox_center is not None else 0.0

        def train(client_id: int) -> ClientState:
            return local_train(
                self.clients[client_id],
                config.local_epochs,
                config.batch_size,
                config.sgd,
                make_rng(config.seed, "local", t, client_id),
                learning_rate=lr,
                prox_center=prox_center,
                prox_mu=prox_mu,
            )

        if config.workers > 1 and len(participants) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                trained = list(pool.map(train, participants))
        else:
            trained = [train(c) for c in participants]
        for state in sorted(trained, key=lambda s: s.client_id):
            self.clients[state.client_id] = state

        if config.method == "standalone":
            for c in participants:
                self.clusters[c] = replace(self.clusters[c], model=self.clients[c].model)

    def edge_phase(self, t: int, participants: List[int]) -> None:
        by_cluster: Dict[int, List[ClientState]] = {}
        for c in participants:
            by_cluster.setdefault(self.clients[c].cluster_id, []).append(self.clients[c])
        for k in sorted(by_cluster):
            for _ in by_cluster[k]:
                self._upload(t, self.client_link)
            model = edge_aggregate(self.clusters[k], by_cluster[k])
            self.clusters[k] = replace(self.clusters[k], model=model)
            self._new_version(k)
        if self.config.method in _SINGLE_MODEL_METHODS:
            self.global_model = self.clusters[0].model

    def _members(self, cluster: ClusterState) -> List[ClientState]:
        return [self.clients[c] for c in cluster.members]

    def _cloud_weights(self, t: int) -> Dict[int, float]:
        config = self.config
        if config.method == "hierfavg":
            return naive_weights(list(self.clusters.values()))
        for k, cluster in self.clusters.items():
            alpha = 1.0 if config.ablation.force_unit_alpha else cluster_val_accuracy(cluster.model, self._members(cluster))
            self.clusters[k] = replace(cluster, val_accuracy=alpha)
        ordered = [self.clusters[k] for k in sorted(self.clusters)]
        if not config.ablation.dynamic_weights:
            return naive_weights(ordered)
        try:
            return compute_rho(ordered, self.w_g_prev, config.cloud_lambda)
        except DegenerateWeightsError as e:
            self._log_event(t, "fallback", reason=str(e))
            return naive_weights(ordered)

    def cloud_phase(self, t: int) -> Dict[int, float]:
        """
        A-phase followed by refinement (or overwrite) of every cluster model.

        A lone cluster is left as is under proximal refinement, since the
        global model is then that cluster's own model.
        """
        if self.bilevel:
            for _ in self.clusters:
                self._upload(t, "edge_cloud")
        rho = self._cloud_weights(t)
        ordered = [self.clusters[k] for k in sorted(self.clusters)]
        w_g = cloud_aggregate_dynamic(ordered, rho)
        self.global_model = w_g
        self.w_g_prev = w_g
        if self.bilevel:
            for _ in self.clusters:
                self._download(t, "edge_cloud")

        mode = "overwrite" if self.config.method == "hierfavg" else self.config.refine.mode
        if mode == "proximal" and len(self.clusters) == 1:
            return rho
        for k in sorted(self.clusters):
            cluster = self.clusters[k]
            if mode == "overwrite":
                self.clusters[k] = replace(cluster, model=w_g)
            elif mode == "proximal":
                data = pooled_train(self._members(cluster))
                refined = refine_cluster(cluster, w_g, self.config.refine, data, make_rng(self.config.seed, "refine", t, k))
                self.clusters[k] = replace(cluster, model=refined)
            else:
                continue
            self._new_version(k)
        return rho

    def cluster_phase(self, t: int) -> None:
        fdc = self.config.fdc
        if t % fdc.recluster_every == 0:
            self._recluster(t)
            return
        flagged = [
            c
            for c in self.client_ids
            if detect_drift(self.clients[c].reference_histogram, self.clients[c].histogram, fdc.phi)
        ]
        if flagged:
            self._reassign(t, flagged)

    def _recluster(self, t: int) -> None:
        ids = self.client_ids
        previous = {k: list(cluster.members) for k, cluster in self.clusters.items()}
        A, assign = recluster([self.clients[c] for c in ids], self.config.fdc)
        assign = match_clusters(previous, assign)
        groups = assign.groups()

        models = {}
        for k, members in groups.items():
            if k in self.clusters:
                models[k] = self.clusters[k].model
                continue
            sizes = np.array([self.clients[c].data_size for c in members], dtype=np.float64)
            prior = [self.clusters[self.clients[c].cluster_id].model for c in members]
            models[k] = weighted_average(prior, sizes / sizes.sum())
            self._new_version(k)

        moved = []
        for c in ids:
            client = replace(self.clients[c], reference_histogram=self.clients[c].histogram)
            k = assign.assignment[c]
            if k != client.cluster_id:
                client = replace(client, cluster_id=k)
                moved.append(c)
            self.clients[c] = client

        self.clusters = self._build_clusters(groups, models)
        self.affinity, self.wcss = A, assign.wcss
        self._log_event(t, "reclustered", moved=moved, **assign.to_json())

    def _reassign(self, t: int, flagged: List[int]) -> None:
        A = build_affinity_matrix([self.clients[c] for c in self.client_ids], self.config.fdc.gamma)
        assign = assignment_from_groups(A, {k: list(cluster.members) for k, cluster in self.clusters.items()})
        models = {k: cluster.model for k, cluster in self.clusters.items()}
        for c in flagged:
            before = self.clients[c]
            assign, client = reassign_client(before, assign, A, self.config.fdc.delta, models)
            # the model swap waits for the client's next participation
            self.clients[c] = replace(client, model=before.model, velocity=before.velocity)
            if client.cluster_id not in models:
                models[client.cluster_id] = client.model
                self._new_version(client.cluster_id)
                self.held[c] = (client.cluster_id, self.versions[client.cluster_id])
            self._log_event(t, "drift_detected", client=c, source=before.cluster_id, destination=client.cluster_id)

        groups = assign.groups()
        self.clusters = self._build_clusters(groups, {k: models[k] for k in groups})
        self.affinity, self.wcss = A, assign.wcss

    def round_metrics(self, t: int, participants: List[int], rho: Optional[Dict[int, float]]) -> RoundMetrics:
        config = self.config
        ordered = [self.clusters[k] for k in sorted(self.clusters)]
        cluster_accs = {k.cluster_id: cluster_val_accuracy(k.model, self._members(k)) for k in ordered}
        global_acc = None
        if self.global_model is not None:
            everyone = pooled_validation([self.clients[c] for c in self.client_ids])
            global_acc = eval_accuracy(self.global_model, everyone)
        p_edge, p_cloud, h = objectives(ordered, self.clients, self.global_model)
        diagnostics = divergence_diagnostics(ordered, self.clients)

        misclustering = None
        if config.clustering in INITIAL_CLUSTERINGS:
            current = ClusterAssignment({c: self.clients[c].cluster_id for c in self.client_ids}, {})
            truth = {c: self.clients[c].ground_truth_cluster for c in self.client_ids}
            misclustering = misclustering_rate(current, truth)

        comm = self.ledger.snapshot()
        return RoundMetrics(
            round=t,
            method=config.method,
            mean_cluster_acc=float(np.mean(list(cluster_accs.values()))),
            cluster_accs=cluster_accs,
            p_edge=p_edge,
            h=h,
            var_p=diagnostics.var_p,
            mean_pair_divergence=diagnostics.mean_pair_divergence,
            n_clusters=len(ordered),
            n_participants=len(participants),
            global_acc=global_acc,
            p_cloud=p_cloud,
            wcss=self.wcss if config.clustering == "fdc" else None,
            misclustering_rate=misclustering,
            rho=rho,
            comm_client_edge=comm["client_edge"],
            comm_edge_cloud=comm["edge_cloud"],
            comm_client_cloud=comm["client_cloud"],
        )

    def step(self, t: int) -> None:
        config = self.config
        self.inject_drift(t)
        participants = sample_participants(
            self.client_ids, config.participation_fraction, make_rng(config.seed, "sample", t)
        )
        self.sync_phase(t, participants)
        self.local_phase(t, participants)
        rho = None
        if self.edge_every is not None and t % self.edge_every == 0:
            self.edge_phase(t, participants)
            if self.cloud_every is not None and t % self.cloud_every == 0:
                rho = self.cloud_phase(t)
        if config.method == "cflhkd" and config.clustering == "fdc" and config.ablation.dynamic_clustering:
            self.cluster_phase(t)
        self.metrics.append(self.round_metrics(t, participants, rho))


def run(config: SimConfig) -> RunArtifacts:
    """
    Execute a full simulation.

    Returns:
        RunArtifacts with one RoundMetrics per round, the event log, the
        communication ledger and the final client, cluster and global models
    """
    started = time.perf_counter()
    loop = _RoundLoop(config)
    edge, cloud = config.intervals
    logger.info(
        "starting %s run: seed=%d rounds=%d clients=%d clusters=%d edge_every=%s cloud_every=%s",
        config.method,
        config.seed,
        config.rounds,
        config.num_clients,
        len(loop.clusters),
        edge,
        cloud,
    )
    for t in range(1, config.rounds + 1):
        loop.step(t)
        if t % 10 == 0 or t == config.rounds:
            logger.info("round %d: mean cluster acc %.4f", t, loop.metrics[-1].mean_cluster_acc)

    return RunArtifacts(
        config=config,
        metrics=loop.metrics,
        events=loop.events,
        ledger=loop.ledger,
        clients=loop.clients,
        clusters=loop.clusters,
        global_model=loop.global_model,
        wall_clock_seconds=time.perf_counter() - started,
    )


def run_baseline(config: SimConfig) -> RunArtifacts:
    """run() for any method other than cflhkd."""
    if config.method == "cflhkd":
        raise ConfigError("run_baseline needs a baseline method, got 'cflhkd'")
    return run(config)


def _jsonable_groups(groups: Dict[int, List[int]]) -> Dict[str, List[int]]:
    return {str(k): [int(c) for c in members] for k, members in sorted(groups.items())}
