import numpy as np
import pytest

from conftest import make_client
from utils.errors import DegenerateVectorError, DegenerateWeightsError, DimensionError
from utils.fedcore.fedcore_utils import (
    ClusterState,
    RefineConfig,
    cloud_aggregate_dynamic,
    cloud_aggregate_naive,
    cluster_val_accuracy,
    compute_rho,
    divergence_aware_lambda,
    edge_aggregate,
    local_train,
    naive_weights,
    pooled_train,
    refine_cluster,
    refinement_gradient,
    refinement_objective,
)
from utils.model.model_utils import Model, ModelSpec, SgdConfig, accuracy, sgd_step
from utils.numerics.numerics_utils import l2_distance, make_rng

SPEC = ModelSpec(3, 2)


def _model(params):
    return Model(SPEC, np.asarray(params, dtype=np.float64))


def _random_model(rng):
    return _model(rng.standard_normal(SPEC.num_params))


def _cluster(cluster_id, model, data_size, val_accuracy=None, members=()):
    return ClusterState(cluster_id, tuple(members), model, data_size, val_accuracy)


def _separable_client(rng, n=60):
    features = rng.standard_normal((n, 2))
    labels = (features[:, 0] + features[:, 1] > 0).astype(np.int64)
    features[:, 0] += np.where(labels == 1, 1.0, -1.0)
    spec = ModelSpec(2, 2)
    return make_client(0, np.zeros(spec.num_params), labels, spec, features=features)


class TestLocalTrain:
    def test_zero_epochs_is_noop(self, rng):
        client = make_client(1, rng.standard_normal(SPEC.num_params), [0, 1, 1, 0], SPEC)
        trained = local_train(client, 0, 2, SgdConfig(), make_rng(0, "local"))
        np.testing.assert_array_equal(trained.model.params, client.model.params)

    def test_fits_separable_shard(self):
        client = _separable_client(make_rng(11, "separable"))
        trained = local_train(client, 5, 4, SgdConfig(learning_rate=0.1), make_rng(11, "local"))
        assert accuracy(trained.model, client.train.features, client.train.labels) >= 0.95
        assert trained.last_loss is not None

    def test_same_seed_is_bit_identical(self, rng):
        client = make_client(2, rng.standard_normal(SPEC.num_params), rng.integers(0, 2, size=30), SPEC)
        a = local_train(client, 3, 8, SgdConfig(), make_rng(5, "local", 1, 2))
        b = local_train(client, 3, 8, SgdConfig(), make_rng(5, "local", 1, 2))
        np.testing.assert_array_equal(a.model.params, b.model.params)
        np.testing.assert_array_equal(a.velocity, b.velocity)

    def test_proximal_term_pulls_towards_center(self):
        client = _separable_client(make_rng(12, "separable"))
        sgd = SgdConfig(learning_rate=0.1, momentum=0.0)
        center = client.model
        plain = local_train(client, 3, 8, sgd, make_rng(3, "local"))
        prox = local_train(client, 3, 8, sgd, make_rng(3, "local"), prox_center=center, prox_mu=1.0)
        assert l2_distance(prox.model.params, center.params) < l2_distance(plain.model.params, center.params)


class TestEdgeAggregate:
    def test_size_weighted_mean(self, rng):
        a, b = rng.standard_normal(SPEC.num_params), rng.standard_normal(SPEC.num_params)
        first = make_client(0, a, np.zeros(10, dtype=int), SPEC)
        second = make_client(1, b, np.zeros(30, dtype=int), SPEC)
        cluster = _cluster(0, _model(a), 40, members=(0, 1))
        merged = edge_aggregate(cluster, [second, first])
        oracle = [0.25 * x + 0.75 * y for x, y in zip(a, b)]
        np.testing.assert_allclose(merged.params, oracle, atol=1e-12)

    def test_equal_sizes_give_arithmetic_mean(self, rng):
        params = rng.standard_normal((3, SPEC.num_params))
        members = [make_client(i, p, [0, 1, 0], SPEC) for i, p in enumerate(params)]
        merged = edge_aggregate(_cluster(0, members[0].model, 9, members=(0, 1, 2)), members)
        np.testing.assert_allclose(merged.params, params.mean(axis=0), atol=1e-12)

    def test_single_member_is_exact(self, rng):
        member = make_client(4, rng.standard_normal(SPEC.num_params), [1, 1], SPEC)
        merged = edge_aggregate(_cluster(2, member.model, 2, members=(4,)), [member])
        np.testing.assert_array_equal(merged.params, member.model.params)

    def test_rejects_non_members(self, rng):
        member = make_client(4, rng.standard_normal(SPEC.num_params), [1, 1], SPEC)
        with pytest.raises(ValueError):
            edge_aggregate(_cluster(2, member.model, 2, members=(5,)), [member])


class TestCloudAggregate:
    def test_naive_weights_by_size(self, rng):
        clusters = [_cluster(k, _random_model(rng), size) for k, size in enumerate((1, 2, 3))]
        assert naive_weights(clusters) == pytest.approx({0: 1 / 6, 1: 2 / 6, 2: 3 / 6})
        merged = cloud_aggregate_naive(clusters)
        oracle = [
            (1 * a + 2 * b + 3 * c) / 6
            for a, b, c in zip(*(k.model.params for k in clusters))
        ]
        np.testing.assert_allclose(merged.params, oracle, atol=1e-12)

    def test_single_cluster_is_identity(self, rng):
        only = _cluster(3, _random_model(rng), 17)
        np.testing.assert_array_equal(cloud_aggregate_naive([only]).params, only.model.params)

    def test_dynamic_one_hot_selects_cluster(self, rng):
        clusters = [_cluster(k, _random_model(rng), 5) for k in range(3)]
        merged = cloud_aggregate_dynamic(clusters, {0: 0.0, 1: 1.0, 2: 0.0})
        np.testing.assert_array_equal(merged.params, clusters[1].model.params)

    def test_dynamic_matches_scalar_oracle(self, rng):
        clusters = [_cluster(k, _random_model(rng), 5) for k in range(3)]
        rho = {0: 0.2, 1: 0.5, 2: 0.3}
        oracle = [
            0.2 * a + 0.5 * b + 0.3 * c
            for a, b, c in zip(*(k.model.params for k in clusters))
        ]
        np.testing.assert_allclose(cloud_aggregate_dynamic(clusters, rho).params, oracle, atol=1e-12)

    def test_dynamic_rejects_mismatched_weights(self, rng):
        clusters = [_cluster(k, _random_model(rng), 5) for k in range(2)]
        with pytest.raises(DimensionError):
            cloud_aggregate_dynamic(clusters, {0: 1.0})


class TestComputeRho:
    def test_uniform_when_everything_equal(self, rng):
        clusters = [_cluster(k, _random_model(rng), 10, 0.5) for k in range(4)]
        rho = compute_rho(clusters, _random_model(rng), 0.0)
        assert rho == pytest.approx({k: 0.25 for k in range(4)})

    def test_accuracy_weighting(self, rng):
        clusters = [_cluster(0, _random_model(rng), 1, 0.9), _cluster(1, _random_model(rng), 1, 0.3)]
        rho = compute_rho(clusters, _random_model(rng), 0.0)
        assert rho[0] == pytest.approx(0.75, abs=1e-12)
        assert rho[1] == pytest.approx(0.25, abs=1e-12)

    def test_farther_cluster_gets_less_weight(self, rng):
        w_g = _random_model(rng)
        near = _cluster(0, w_g.with_params(w_g.params + 0.1), 10, 0.8)
        far = _cluster(1, w_g.with_params(w_g.params + 1.0), 10, 0.8)
        previous = None
        for lam in (0.0, 0.1, 1.0, 10.0):
            rho = compute_rho([near, far], w_g, lam)
            assert rho[0] >= rho[1]
            if previous is not None:
                assert rho[1] <= previous
            previous = rho[1]
        assert sum(rho.values()) == pytest.approx(1.0)

    def test_reduces_to_naive_bitwise(self, rng):
        clusters = [_cluster(k, _random_model(rng), size, 1.0) for k, size in enumerate((13, 7, 29))]
        assert compute_rho(clusters, _random_model(rng), 0.0) == naive_weights(clusters)

    def test_without_previous_global_uses_naive(self, rng):
        clusters = [_cluster(k, _random_model(rng), size) for k, size in enumerate((4, 6))]
        assert compute_rho(clusters, None, 0.5) == naive_weights(clusters)

    def test_large_distances_do_not_underflow(self, rng):
        w_g = _random_model(rng)
        clusters = [
            _cluster(0, w_g.with_params(w_g.params + 100.0), 10, 0.5),
            _cluster(1, w_g.with_params(w_g.params + 101.0), 10, 0.5),
        ]
        rho = compute_rho(clusters, w_g, 1.0)
        assert rho[0] == pytest.approx(1.0)

    def test_all_zero_accuracy_is_degenerate(self, rng):
        clusters = [_cluster(k, _random_model(rng), 10, 0.0) for k in range(2)]
        with pytest.raises(DegenerateWeightsError):
            compute_rho(clusters, _random_model(rng), 0.1)

    def test_one_zero_accuracy_is_degenerate(self, rng):
        clusters = [_cluster(0, _random_model(rng), 10, 0.8), _cluster(1, _random_model(rng), 10, 0.0)]
        with pytest.raises(DegenerateWeightsError, match=r"\[1\]"):
            compute_rho(clusters, _random_model(rng), 0.1)

    def test_missing_accuracy_raises(self, rng):
        with pytest.raises(ValueError):
            compute_rho([_cluster(0, _random_model(rng), 10)], _random_model(rng), 0.1)


def test_divergence_aware_lambda_examples():
    lambda0 = 0.3
    base = _model([1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 0.0, 1.0])
    assert divergence_aware_lambda(base, base, lambda0) == pytest.approx(lambda0)
    assert divergence_aware_lambda(base, base.with_params(-base.params), lambda0) == pytest.approx(lambda0 / 3)
    x = _model([1.0, 0, 0, 0, 0, 0, 0, 0])
    y = _model([0, 1.0, 0, 0, 0, 0, 0, 0])
    assert divergence_aware_lambda(x, y, lambda0) == pytest.approx(lambda0 / 2)
    with pytest.raises(DegenerateVectorError):
        divergence_aware_lambda(_model(np.zeros(SPEC.num_params)), x, lambda0)


class TestRefinement:
    def test_gradient_matches_central_differences(self, rng):
        model, w_g = _random_model(rng), _random_model(rng)
        features = rng.standard_normal((6, 3))
        labels = rng.integers(0, 2, size=6)
        analytic = refinement_gradient(model, w_g, 0.3, features, labels)
        h = 1e-5
        numeric = np.zeros_like(model.params)
        for i in range(model.params.size):
            step = np.zeros_like(model.params)
            step[i] = h
            up = refinement_objective(model.with_params(model.params + step), w_g, 0.3, features, labels)
            down = refinement_objective(model.with_params(model.params - step), w_g, 0.3, features, labels)
            numeric[i] = (up - down) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

    def test_gradient_matches_central_differences_on_random_instances(self):
        rng = make_rng(21, "refine-gradient")
        shapes = [(d, c) for d in range(2, 10) for c in range(2, 6) if 10 <= (d + 1) * c <= 50]
        h = 1e-5
        for _ in range(20):
            input_dim, num_classes = shapes[int(rng.integers(len(shapes)))]
            spec = ModelSpec(input_dim, num_classes)
            model = Model(spec, rng.normal(scale=0.5, size=spec.num_params))
            w_g = Model(spec, rng.normal(scale=0.5, size=spec.num_params))
            lam = float(rng.uniform(0.0, 1.0))
            features = rng.standard_normal((8, input_dim))
            labels = rng.integers(0, num_classes, size=8)

            def objective(params):
                return refinement_objective(model.with_params(params), w_g, lam, features, labels)

            numeric = np.zeros(spec.num_params)
            for i in range(spec.num_params):
                step = np.zeros(spec.num_params)
                step[i] = h
                numeric[i] = (objective(model.params + step) - objective(model.params - step)) / (2 * h)
            analytic = refinement_gradient(model, w_g, lam, features, labels)
            assert 10 <= spec.num_params <= 50
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

    def test_zero_steps_returns_input(self, rng):
        cluster = _cluster(0, _random_model(rng), 4)
        client = make_client(0, cluster.model.params, [0, 1, 1, 0], SPEC)
        refined = refine_cluster(cluster, _random_model(rng), RefineConfig(refine_steps=0), client.train, rng)
        np.testing.assert_array_equal(refined.params, cluster.model.params)

    def test_pure_proximal_step_moves_towards_global(self, rng):
        cluster = _cluster(0, _random_model(rng), 4)
        w_g = _random_model(rng)
        client = make_client(0, cluster.model.params, [0, 1, 1, 0], SPEC)
        cfg = RefineConfig(refine_steps=1, loss_weight=0.0, lambda0=0.5, refine_lr=0.1)
        refined = refine_cluster(cluster, w_g, cfg, client.train, make_rng(0, "refine"))
        assert l2_distance(refined.params, w_g.params) < l2_distance(cluster.model.params, w_g.params)

    def test_zero_lambda_is_plain_sgd(self, rng):
        cluster = _cluster(0, _random_model(rng), 12)
        client = make_client(0, cluster.model.params, rng.integers(0, 2, size=12), SPEC)
        cfg = RefineConfig(refine_steps=3, lambda0=0.0, refine_lr=0.05, batch_size=4)
        refined = refine_cluster(cluster, _random_model(rng), cfg, client.train, make_rng(9, "refine"))

        sgd = SgdConfig(learning_rate=0.05, momentum=0.0, weight_decay=0.0)
        replay_rng = make_rng(9, "refine")
        model, velocity = cluster.model, np.zeros(SPEC.num_params)
        for _ in range(3):
            idx = replay_rng.choice(12, size=4, replace=False)
            g = refinement_gradient(model, model, 0.0, client.train.features[idx], client.train.labels[idx])
            model, velocity = sgd_step(model, g, sgd, velocity)
        np.testing.assert_allclose(refined.params, model.params, atol=1e-14)


def test_pooled_train_is_in_client_order():
    spec = SPEC
    a = make_client(3, np.zeros(spec.num_params), [1, 1], spec)
    b = make_client(1, np.zeros(spec.num_params), [0], spec)
    pooled = pooled_train([a, b])
    assert pooled.labels.tolist() == [0, 1, 1]


def test_cluster_val_accuracy_uses_member_validation():
    # bias favours class 1 for every input
    model = _model([0, 0, 0, 0, 0, 0, 0.0, 1.0])
    members = [
        make_client(0, model.params, [1, 1, 0], SPEC),
        make_client(1, model.params, [1], SPEC),
    ]
    assert cluster_val_accuracy(model, members) == pytest.approx(0.75)
