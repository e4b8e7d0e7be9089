import math

import numpy as np
import pytest

from dpfedsim.data import generate_synthetic_split, partition
from dpfedsim.dp import DpConfig, Mechanism
from dpfedsim.errors import DivergenceError, ValidationError
from dpfedsim.federation import (
    ClusterState,
    ExperimentConfig,
    aggregate,
    local_round,
    run_experiment,
)
from dpfedsim.mlp import LayerShape, ModelParams, init_model, loss_and_gradient, sgd_step, unflatten
from dpfedsim.seeds import DOMAIN_BATCH, derive_rng


def make_config(
    mechanism=Mechanism.NONE,
    epsilon=math.inf,
    clip_norm=1.0,
    learning_rate=0.0046,
    hidden=(8,),
    clusters=2,
    rounds=4,
    batch_size=16,
    per_cluster=30,
    seed=5,
    **kwargs,
):
    dp_cfg = DpConfig(
        mechanism=mechanism,
        epsilon=epsilon,
        delta=1e-5,
        clip_norm=clip_norm,
        learning_rate=learning_rate,
        dataset_size=per_cluster,
        batch_fraction=min(1.0, batch_size / per_cluster),
        max_rounds=rounds,
    )
    return ExperimentConfig(
        shape=LayerShape((21, *hidden, 5)),
        dp=dp_cfg,
        n_clusters=clusters,
        max_rounds=rounds,
        batch_size=batch_size,
        per_cluster=per_cluster,
        master_seed=seed,
        tail_window=min(kwargs.pop("tail_window", rounds), rounds),
        **kwargs,
    )


def small_datasets(train_n=200, test_n=40, seed=3, separation=3.0):
    return generate_synthetic_split(train_n, test_n, separation, seed)


def deterministic_fields(result):
    return [
        (r.iteration, r.accuracy, r.macro_precision, r.macro_recall, r.mean_loss)
        for r in result.records
    ]


class TestAggregate:
    def test_single_update_unchanged(self):
        v = np.random.default_rng(0).standard_normal(10)
        assert np.array_equal(aggregate([v]), v)

    def test_opposite_vectors_cancel(self):
        v = np.random.default_rng(1).standard_normal(10)
        assert np.array_equal(aggregate([v, -v]), np.zeros(10))

    def test_matches_sequential_oracle_bitwise(self):
        rng = np.random.default_rng(2)
        vs = [rng.standard_normal(50) for _ in range(3)]
        total = vs[0].copy()
        total += vs[1]
        total += vs[2]
        expected = total / 3
        assert np.array_equal(aggregate(vs), expected)

    def test_idempotent_on_identical_vectors(self):
        v = np.full(4, 0.1)
        assert np.array_equal(aggregate([v, v.copy(), v.copy()]), v)

    def test_layout_mismatch(self):
        with pytest.raises(ValidationError):
            aggregate([np.zeros(3), np.zeros(4)])
        with pytest.raises(ValidationError):
            aggregate([])


class TestLocalRound:
    def test_vanishing_step_returns_global(self):
        cfg = make_config(learning_rate=1e-300, clip_norm=math.inf)
        train, _ = small_datasets()
        shard = partition(train, cfg.n_clusters, cfg.per_cluster, cfg.master_seed)[0]
        global_params = init_model(cfg.shape, cfg.master_seed)
        state = ClusterState(0, shard, global_params)
        gamma, loss = local_round(state, global_params, cfg, round_index=1)
        assert np.allclose(gamma, global_params.values, rtol=0, atol=1e-280)
        assert loss > 0

    def test_deterministic_given_round(self):
        cfg = make_config(mechanism=Mechanism.GAUSSIAN, epsilon=0.5, clip_norm=1.0)
        train, _ = small_datasets()
        shard = partition(train, cfg.n_clusters, cfg.per_cluster, cfg.master_seed)[0]
        global_params = init_model(cfg.shape, cfg.master_seed)
        g1, l1 = local_round(ClusterState(0, shard, global_params), global_params, cfg, 2)
        g2, l2 = local_round(ClusterState(0, shard, global_params), global_params, cfg, 2)
        g3, _ = local_round(ClusterState(0, shard, global_params), global_params, cfg, 3)
        assert np.array_equal(g1, g2) and l1 == l2
        assert not np.array_equal(g1, g3)

    def test_manual_trace_tiny_net(self):
        # independent trace of one SGD + clip step on a 21-2-5 net with a
        # single sample, written directly against the update equations
        cfg = make_config(
            hidden=(2,),
            clusters=1,
            per_cluster=1,
            batch_size=1,
            learning_rate=0.5,
            clip_norm=0.01,  # small enough that clipping binds
        )
        train, _ = small_datasets(train_n=1, test_n=1)
        shard = partition(train, 1, 1, cfg.master_seed)[0]
        global_params = init_model(cfg.shape, cfg.master_seed)
        state = ClusterState(0, shard, global_params)
        gamma, _ = local_round(state, global_params, cfg, round_index=1)

        x = shard.dataset.features  # (1, 21)
        y = shard.dataset.labels
        (w1, b1), (w2, b2) = unflatten(cfg.shape, global_params.values)
        hpre = x @ w1 + b1
        h = np.maximum(hpre, 0.0)
        logits = h @ w2 + b2
        e = np.exp(logits - logits.max())
        probs = e / e.sum()
        dlogits = probs.copy()
        dlogits[0, y[0]] -= 1.0
        gw2 = h.T @ dlogits
        gb2 = dlogits.sum(axis=0)
        dh = (dlogits @ w2.T) * (h > 0)
        gw1 = x.T @ dh
        gb1 = dh.sum(axis=0)
        grad = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])
        stepped = global_params.values - 0.5 * grad
        delta = stepped - global_params.values
        norm = np.linalg.norm(delta)
        assert norm > 0.01  # the clip must actually bind for this trace
        clipped = delta * (0.01 / norm)
        expected = global_params.values + clipped
        assert np.max(np.abs(gamma - expected)) < 1e-15

    def test_pre_noise_params_kept_in_state(self):
        cfg = make_config(mechanism=Mechanism.GAUSSIAN, epsilon=0.01, clip_norm=1.0)
        train, _ = small_datasets()
        shard = partition(train, cfg.n_clusters, cfg.per_cluster, cfg.master_seed)[0]
        global_params = init_model(cfg.shape, cfg.master_seed)
        state = ClusterState(0, shard, global_params)
        gamma, _ = local_round(state, global_params, cfg, 1)
        # state holds theta (pre-noise); gamma = theta + noise differs
        assert not np.array_equal(gamma, state.params.values)
        delta = state.params.values - global_params.values
        assert np.linalg.norm(delta) <= cfg.dp.clip_norm * (1 + 1e-12)


class TestRunExperiment:
    def test_degenerate_single_cluster_single_round(self):
        # one cluster, one round, full batch, no noise, no binding clip:
        # the result must equal one plain SGD step from the same stream
        train, test = small_datasets(train_n=12, test_n=20)
        n = len(train)
        cfg = make_config(
            clusters=1,
            rounds=1,
            batch_size=n,
            per_cluster=n,
            clip_norm=1e9,
            tail_window=1,
        )
        result = run_experiment(cfg, train, test)

        shard = partition(train, 1, n, cfg.master_seed)[0]
        init = init_model(cfg.shape, cfg.master_seed)
        idx = derive_rng(cfg.master_seed, DOMAIN_BATCH, 0, 1).choice(n, size=n, replace=False)
        _, grad = loss_and_gradient(
            init, shard.dataset.features[idx], shard.dataset.labels[idx]
        )
        expected = sgd_step(init, grad, cfg.dp.learning_rate)
        assert np.max(np.abs(result.final_params.values - expected.values)) < 1e-12
        assert len(result.records) == 1

    def test_matches_fedavg_reference_loop(self):
        # straight-line reference: synchronized one-step averaging with no
        # clipping (huge norm bound) and no noise
        train, test = small_datasets(train_n=200, test_n=30)
        cfg = make_config(
            clusters=3, rounds=5, per_cluster=50, batch_size=20, clip_norm=1e9
        )
        result = run_experiment(cfg, train, test)

        shards = partition(train, 3, 50, cfg.master_seed)
        theta = init_model(cfg.shape, cfg.master_seed)
        for i in range(1, 6):
            locals_ = []
            for c, shard in enumerate(shards):
                rng = derive_rng(cfg.master_seed, DOMAIN_BATCH, c, i)
                idx = rng.choice(50, size=20, replace=False)
                _, grad = loss_and_gradient(
                    theta, shard.dataset.features[idx], shard.dataset.labels[idx]
                )
                locals_.append(theta.values - cfg.dp.learning_rate * grad)
            total = locals_[0].copy()
            for other in locals_[1:]:
                total += other
            theta = ModelParams(cfg.shape, total / 3)
        assert np.max(np.abs(result.final_params.values - theta.values)) < 1e-12

    def test_records_cadence_and_tail(self):
        train, test = small_datasets()
        cfg = make_config(rounds=10, eval_every=3, tail_window=10)
        result = run_experiment(cfg, train, test)
        assert [r.iteration for r in result.records] == [3, 6, 9, 10]
        assert len(result.records) == math.ceil(10 / 3)
        elapsed = [r.elapsed_ms for r in result.records]
        assert elapsed == sorted(elapsed)
        assert result.final_confusion.sum() == len(test)

    def test_run_twice_identical(self):
        train, test = small_datasets()
        cfg = make_config(mechanism=Mechanism.LAPLACE, epsilon=0.5, rounds=6)
        a = run_experiment(cfg, train, test)
        b = run_experiment(cfg, train, test)
        assert deterministic_fields(a) == deterministic_fields(b)
        assert a.final_params.values.tobytes() == b.final_params.values.tobytes()

    def test_thread_count_invariance(self):
        train, test = small_datasets()
        cfg = make_config(mechanism=Mechanism.GAUSSIAN, epsilon=0.5, clusters=4, rounds=5, per_cluster=40)
        a = run_experiment(cfg, train, test, threads=1)
        b = run_experiment(cfg, train, test, threads=4)
        assert deterministic_fields(a) == deterministic_fields(b)
        assert a.final_params.values.tobytes() == b.final_params.values.tobytes()

    def test_divergence_error_names_round(self):
        train, test = small_datasets()
        cfg = make_config(learning_rate=1e250, clip_norm=math.inf, rounds=8)
        with pytest.raises(DivergenceError) as err:
            run_experiment(cfg, train, test)
        assert err.value.round_index == 2
        assert "round 2" in str(err.value)

    def test_budgets_none_mechanism(self):
        train, test = small_datasets()
        cfg = make_config(rounds=2)
        result = run_experiment(cfg, train, test)
        assert result.budgets["parallel"] is None
        assert "note" in result.budgets

    def test_budgets_composed_for_gaussian(self):
        train, test = small_datasets()
        cfg = make_config(mechanism=Mechanism.GAUSSIAN, epsilon=0.5, rounds=2)
        result = run_experiment(cfg, train, test)
        assert result.budgets["parallel"]["epsilon_bar"] == 0.5
        nt = cfg.n_clusters * cfg.max_rounds
        assert result.budgets["naive_sequential"]["epsilon_bar"] == 0.5 * nt

    def test_per_cluster_accuracy_option(self):
        train, test = small_datasets()
        cfg = make_config(rounds=2, eval_per_cluster=True)
        result = run_experiment(cfg, train, test)
        assert len(result.per_cluster_accuracy) == cfg.n_clusters
        assert all(0.0 <= a <= 1.0 for a in result.per_cluster_accuracy)

    def test_capacity_checked(self):
        train, test = small_datasets(train_n=4, test_n=4)
        cfg = make_config(clusters=5, per_cluster=10)
        with pytest.raises(ValidationError):
            run_experiment(cfg, train, test)

    def test_noise_ordering_micro(self):
        # a narrowly separated task run briefly: heavy noise should not
        # beat the no-noise baseline by more than noise-level jitter
        train, test = small_datasets(train_n=300, test_n=100, separation=1.5)
        quiet = make_config(rounds=30, clusters=3, per_cluster=80, tail_window=10)
        noisy = make_config(
            mechanism=Mechanism.GAUSSIAN,
            epsilon=0.01,
            clip_norm=1.0,
            rounds=30,
            clusters=3,
            per_cluster=80,
            tail_window=10,
        )
        acc_quiet = run_experiment(quiet, train, test).tail_accuracy
        acc_noisy = run_experiment(noisy, train, test).tail_accuracy
        assert acc_quiet >= acc_noisy - 0.05


class TestConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ValidationError):
            make_config(rounds=0)
        with pytest.raises(ValidationError):
            make_config(clusters=0)
        with pytest.raises(ValidationError):
            make_config(eval_every=0)
        with pytest.raises(ValidationError):
            make_config(activation="sigmoid")

    def test_tail_window_bounds(self):
        cfg = make_config(rounds=4, tail_window=4)
        assert cfg.tail_window == 4
        with pytest.raises(ValidationError):
            ExperimentConfig(
                shape=cfg.shape,
                dp=cfg.dp,
                n_clusters=1,
                max_rounds=2,
                batch_size=4,
                per_cluster=4,
                master_seed=0,
                tail_window=5,
            )
