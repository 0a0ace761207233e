import numpy as np
import pytest

from conftest import make_client
from utils.data.data_utils import (
    DataConfig,
    DriftEvent,
    LabeledDataset,
    PartitionConfig,
    apply_drift,
    build_federation,
    dirichlet_partition,
    generate_cluster_tasks,
    label_histogram,
    load_dataset,
    save_dataset,
    select_affected_clients,
)
from utils.errors import ConfigError, PartitionError, UnknownDriftKindError
from utils.fedcore.fedcore_utils import make_client_state
from utils.model.model_utils import ModelSpec, SgdConfig, accuracy, grad, sgd_step, zeros_model
from utils.numerics.numerics_utils import jsd, make_rng

SPEC = ModelSpec(10, 10)


def _balanced_pool(task, per_class, rng, num_classes=10):
    return task.sample_dataset(np.repeat(np.arange(num_classes), per_class), rng)


def _fit(data, spec, steps=300):
    model = zeros_model(spec)
    cfg = SgdConfig(learning_rate=0.2, momentum=0.0, weight_decay=0.0)
    velocity = np.zeros(spec.num_params)
    for _ in range(steps):
        model, velocity = sgd_step(model, grad(model, data.features, data.labels), cfg, velocity)
    return model


def test_single_task():
    tasks = generate_cluster_tasks(1, 1.5, SPEC, make_rng(0, "tasks"))
    assert len(tasks) == 1
    assert tasks[0].means.shape == (10, 10)


def test_tasks_deterministic():
    a = generate_cluster_tasks(3, 1.0, SPEC, make_rng(9, "tasks"))
    b = generate_cluster_tasks(3, 1.0, SPEC, make_rng(9, "tasks"))
    for ta, tb in zip(a, b):
        np.testing.assert_array_equal(ta.means, tb.means)


def test_zero_separation_gives_identical_tasks():
    tasks = generate_cluster_tasks(3, 0.0, SPEC, make_rng(1, "tasks"))
    for task in tasks[1:]:
        np.testing.assert_allclose(task.means, tasks[0].means, atol=1e-12)


def test_well_separated_tasks_do_not_transfer():
    # in two dimensions a rotation by pi swaps the two centered class means
    spec = ModelSpec(2, 2)
    tasks = generate_cluster_tasks(2, np.pi, spec, make_rng(4, "tasks"), class_sep=5.0, noise_std=0.1)
    rng = make_rng(4, "samples")
    first = _balanced_pool(tasks[0], 40, rng, num_classes=2)
    second = _balanced_pool(tasks[1], 40, rng, num_classes=2)
    model = _fit(first, spec)
    assert accuracy(model, first.features, first.labels) > 0.9
    assert accuracy(model, second.features, second.labels) <= 0.6


def test_label_conflict_cycles_class_means():
    tasks = generate_cluster_tasks(3, 0.0, SPEC, make_rng(7, "tasks"), label_conflict=0.3)
    base = tasks[0].means
    for task in tasks[1:]:
        moved = [c for c in range(10) if not np.array_equal(task.means[c], base[c])]
        assert len(moved) == 3
        # the moved classes trade means among themselves
        assert sorted(map(tuple, task.means[moved])) == sorted(map(tuple, base[moved]))


def test_label_conflict_makes_labels_disagree():
    spec = ModelSpec(2, 2)
    tasks = generate_cluster_tasks(2, 0.0, spec, make_rng(4, "tasks"), class_sep=5.0, noise_std=0.1, label_conflict=1.0)
    rng = make_rng(4, "samples")
    first = _balanced_pool(tasks[0], 40, rng, num_classes=2)
    second = _balanced_pool(tasks[1], 40, rng, num_classes=2)
    model = _fit(first, spec)
    assert accuracy(model, first.features, first.labels) > 0.9
    assert accuracy(model, second.features, second.labels) < 0.2


def test_label_conflict_validated():
    with pytest.raises(ConfigError):
        DataConfig(label_conflict=1.5)
    with pytest.raises(ConfigError):
        generate_cluster_tasks(2, 0.0, SPEC, make_rng(0, "tasks"), label_conflict=-0.1)


def test_partition_is_disjoint_and_sized():
    task = generate_cluster_tasks(1, 0.0, SPEC, make_rng(2, "tasks"))[0]
    pool = _balanced_pool(task, 200, make_rng(2, "pool"))
    cfg = PartitionConfig(num_clients=10, dirichlet_alpha=0.5, samples_per_client=(50, 150))
    shards = dirichlet_partition(pool, cfg, make_rng(2, "partition"))
    seen = np.concatenate([s.pool_indices for s in shards])
    assert len(seen) == len(set(seen.tolist()))
    assert len(seen) <= len(pool)
    for shard in shards:
        size = len(shard.train) + len(shard.validation)
        assert 50 <= size <= 150
        assert len(shard.validation) >= 1 and len(shard.train) >= 1


def test_partition_large_alpha_matches_pool_proportions():
    task = generate_cluster_tasks(1, 0.0, SPEC, make_rng(3, "tasks"))[0]
    pool = _balanced_pool(task, 1500, make_rng(3, "pool"))
    cfg = PartitionConfig(num_clients=50, dirichlet_alpha=1e6, samples_per_client=(200, 200))
    shards = dirichlet_partition(pool, cfg, make_rng(3, "partition"))
    for shard in shards:
        labels = np.concatenate([shard.train.labels, shard.validation.labels])
        proportions = np.bincount(labels, minlength=10) / labels.size
        np.testing.assert_allclose(proportions, np.full(10, 0.1), atol=0.05)


def test_partition_small_alpha_is_skewed():
    task = generate_cluster_tasks(1, 0.0, SPEC, make_rng(5, "tasks"))[0]
    pool = _balanced_pool(task, 1000, make_rng(5, "pool"))
    cfg = PartitionConfig(num_clients=40, dirichlet_alpha=0.1, samples_per_client=(100, 100))
    shards = dirichlet_partition(pool, cfg, make_rng(5, "partition"))
    concentrated = 0
    for shard in shards:
        labels = np.concatenate([shard.train.labels, shard.validation.labels])
        counts = np.sort(np.bincount(labels, minlength=10))[::-1]
        if counts[:2].sum() / counts.sum() > 0.7:
            concentrated += 1
    assert concentrated >= len(shards) / 2


def test_partition_pool_too_small():
    task = generate_cluster_tasks(1, 0.0, SPEC, make_rng(6, "tasks"))[0]
    pool = _balanced_pool(task, 2, make_rng(6, "pool"))
    with pytest.raises(PartitionError):
        dirichlet_partition(pool, PartitionConfig(num_clients=5, samples_per_client=(50, 60)), make_rng(6, "p"))


def test_partition_config_validation():
    with pytest.raises(ConfigError):
        PartitionConfig(num_clients=0)
    with pytest.raises(ConfigError):
        PartitionConfig(num_clients=5, dirichlet_alpha=0.0)
    with pytest.raises(ConfigError):
        PartitionConfig(num_clients=5, samples_per_client=(1, 10))


def test_label_histogram_examples(rng):
    assert label_histogram(LabeledDataset.empty(3), 4).tolist() == [0, 0, 0, 0]
    assert label_histogram(LabeledDataset(np.zeros((3, 2)), [0, 0, 1]), 2).tolist() == [2, 1]
    labels = rng.integers(0, 5, size=77)
    assert label_histogram(LabeledDataset(np.zeros((77, 1)), labels), 5).sum() == 77


def _spec_client(labels, num_classes=2, client_id=0):
    spec = ModelSpec(3, num_classes)
    return make_client(client_id, np.zeros(spec.num_params), labels, spec)


def test_identity_permutation_is_noop():
    client = _spec_client([0, 0, 1, 1, 1])
    event = DriftEvent(round=1, kind="label-permutation", affected_clients=(0,), parameters={"permutation": [0, 1]})
    drifted = apply_drift(client, event, make_rng(0, "drift"))
    np.testing.assert_array_equal(drifted.train.labels, client.train.labels)
    np.testing.assert_array_equal(drifted.train.features, client.train.features)
    np.testing.assert_array_equal(drifted.histogram, client.histogram)


def test_swap_permutation_exchanges_bins():
    client = _spec_client([0, 0, 1, 1, 1])
    event = DriftEvent(round=1, kind="label-permutation", affected_clients=(0,), parameters={"permutation": [1, 0]})
    drifted = apply_drift(client, event, make_rng(0, "drift"))
    assert drifted.histogram.tolist() == [3, 2]
    assert jsd(client.histogram, drifted.histogram) > 0


def test_subset_switch_has_disjoint_support():
    client = _spec_client(np.arange(5).repeat(4), num_classes=10)
    event = DriftEvent(
        round=1,
        kind="label-subset-switch",
        affected_clients=(0,),
        parameters={"source": [0, 1, 2, 3, 4], "target": [5, 6, 7, 8, 9]},
    )
    drifted = apply_drift(client, event, make_rng(0, "drift"))
    assert set(drifted.train.labels.tolist()) == {5, 6, 7, 8, 9}
    assert jsd(client.histogram, drifted.histogram) == pytest.approx(1.0, abs=1e-3)


def test_subset_switch_resamples_features_from_task():
    federation = build_federation(DataConfig(num_clients=2, num_clusters=1, label_subset=(0, 1, 2, 3, 4)), SPEC, 3)
    client = make_client_state(federation.clients[0], zeros_model(SPEC), SPEC.num_classes)
    event = DriftEvent(
        round=1,
        kind="label-subset-switch",
        affected_clients=(0,),
        parameters={"source": [0, 1, 2, 3, 4], "target": [5, 6, 7, 8, 9]},
    )
    drifted = apply_drift(client, event, make_rng(3, "drift"))
    assert not np.array_equal(drifted.train.features, client.train.features)
    kept = apply_drift(client, DriftEvent(1, event.kind, (0,), {**event.parameters, "resample_features": False}), make_rng(3, "drift"))
    np.testing.assert_array_equal(kept.train.features, client.train.features)


def test_feature_shift_moves_means_not_labels():
    client = _spec_client([0, 1, 0, 1])
    event = DriftEvent(round=1, kind="feature-shift", affected_clients=(0,), parameters={"shift": [1.0, -2.0, 0.5]})
    drifted = apply_drift(client, event, make_rng(0, "drift"))
    np.testing.assert_allclose(
        drifted.train.features.mean(axis=0) - client.train.features.mean(axis=0), [1.0, -2.0, 0.5], atol=1e-12
    )
    np.testing.assert_array_equal(drifted.histogram, client.histogram)


def test_unknown_drift_kind():
    client = _spec_client([0, 1])
    with pytest.raises(UnknownDriftKindError):
        apply_drift(client, DriftEvent(round=1, kind="label-noise", affected_clients=(0,)), make_rng(0, "drift"))


def test_fraction_event_resolves_per_seed():
    event = DriftEvent(round=5, kind="label-permutation", parameters={"permutation": [1, 0]}, fraction=0.5)
    assert not event.resolved
    drawn = {event.resolve(100, seed).affected_clients for seed in range(5)}
    assert len(drawn) > 1
    assert all(len(clients) == 50 for clients in drawn)
    assert event.resolve(100, 2) == event.resolve(100, 2)
    assert event.resolve(100, 2).resolved


def test_explicit_event_resolves_to_itself():
    event = DriftEvent(round=5, kind="label-permutation", affected_clients=(3, 1), parameters={"permutation": [1, 0]})
    assert event.resolve(100, 7) is event
    assert event.affected_clients == (3, 1)


def test_drift_event_validation():
    with pytest.raises(ConfigError):
        DriftEvent(round=1, kind="feature-shift", affected_clients=(0,), fraction=0.5)
    with pytest.raises(ConfigError):
        DriftEvent(round=1, kind="feature-shift")
    with pytest.raises(ConfigError):
        DriftEvent(round=1, kind="feature-shift", fraction=1.5)


def test_unresolved_event_cannot_be_applied():
    client = _spec_client([0, 0, 1, 1, 1])
    event = DriftEvent(round=1, kind="label-permutation", parameters={"permutation": [1, 0]}, fraction=1.0)
    with pytest.raises(ValueError):
        apply_drift(client, event, make_rng(0, "drift"))


def test_selected_clients():
    assert select_affected_clients(10, 1.0, 0, 5) == tuple(range(10))
    chosen = select_affected_clients(10, 0.5, 0, 5)
    assert len(chosen) == 5
    assert chosen == select_affected_clients(10, 0.5, 0, 5)
    assert len(select_affected_clients(10, 0.01, 0, 5)) == 1


def test_build_federation_is_deterministic():
    cfg = DataConfig(num_clients=12, num_clusters=3, samples_per_client=(30, 60))
    a = build_federation(cfg, SPEC, 21)
    b = build_federation(cfg, SPEC, 21)
    assert [c.cluster for c in a.clients] == [i % 3 for i in range(12)]
    for ca, cb in zip(a.clients, b.clients):
        np.testing.assert_array_equal(ca.train.features, cb.train.features)
        np.testing.assert_array_equal(label_histogram(ca.train, 10), label_histogram(cb.train, 10))


def test_label_subset_restricts_classes():
    cfg = DataConfig(num_clients=4, num_clusters=2, samples_per_client=(30, 60), label_subset=(0, 1, 2, 3, 4))
    for client in build_federation(cfg, SPEC, 0).clients:
        assert client.train.labels.max() <= 4


def test_dataset_export_round_trip(tmp_path, rng):
    dataset = LabeledDataset(rng.standard_normal((15, 4)), rng.integers(0, 3, size=15))
    path = save_dataset(tmp_path / "shard.bin", dataset, 3)
    loaded, num_classes = load_dataset(path)
    assert num_classes == 3
    np.testing.assert_array_equal(loaded.features, dataset.features)
    np.testing.assert_array_equal(loaded.labels, dataset.labels)
