import dataclasses

import numpy as np
import pytest

from pctrust.analysis import cosine_similarity, equilibrated_gradient_1mlp
from pctrust.data import RegressionTask, sample_regression
from pctrust.energy import InferenceSchedule, Precisions
from pctrust.network import Batch, NetworkSpec, WeightSet, bp_grad
from pctrust.trainers import (
    GridSearchResult,
    TrainConfig,
    bp_step,
    grid_search,
    pc_step,
    record_csv_rows,
    train,
    trn_step_1mlp,
)

from conftest import fd_gradient


ONE_MLP = NetworkSpec((1, 1, 1), ("linear", "linear"))
TASK = RegressionTask(slope=-1.0, input_mean=1.0, input_variance=0.1, seed=0)


def mlp_weights(w1, w2):
    return WeightSet([np.array([[w1]]), np.array([[w2]])])


def tight_schedule():
    return InferenceSchedule(step_size=0.1, max_iters=2000, halving_count=0,
                             convergence_tolerance=1e-12)


class TestConfigValidation:
    def test_pc_needs_schedule(self):
        with pytest.raises(ValueError):
            TrainConfig(algorithm="pc", learning_rate=0.1)

    def test_bp_rejects_schedule(self):
        with pytest.raises(ValueError):
            TrainConfig(algorithm="bp", learning_rate=0.1, inference=InferenceSchedule())

    def test_trn_needs_damping(self):
        with pytest.raises(ValueError):
            TrainConfig(algorithm="trn1mlp", learning_rate=0.1)

    def test_bp_rejects_damping(self):
        with pytest.raises(ValueError):
            TrainConfig(algorithm="bp", learning_rate=0.1, trn_damping=2.0)

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError):
            TrainConfig(algorithm="adam", learning_rate=0.1)


class TestBpStep:
    def test_no_move_at_zero_gradient(self):
        w = mlp_weights(0.5, -2.0)
        new = bp_step(ONE_MLP, w, Batch([[1.0]], [[-1.0]]), 0.2)
        assert np.allclose(new.flat(), w.flat())

    def test_hand_example(self):
        new = bp_step(ONE_MLP, mlp_weights(1.0, 1.0), Batch([[1.0]], [[-1.0]]), 0.2)
        assert np.allclose(new.flat(), [0.6, 0.6])

    def test_matches_fd_descent_direction(self):
        rng = np.random.default_rng(1)
        from pctrust.network import loss

        for _ in range(10):
            w1, w2 = rng.uniform(-1, 1, size=2)
            batch = sample_regression(TASK, 16, draw=int(rng.integers(1, 100)))
            w = mlp_weights(w1, w2)
            delta = bp_step(ONE_MLP, w, batch, 0.2).flat() - w.flat()
            fd = fd_gradient(
                lambda v: loss(ONE_MLP, mlp_weights(v[0], v[1]), batch),
                np.array([w1, w2]),
            )
            if np.linalg.norm(fd) < 1e-12:
                continue
            assert cosine_similarity(delta, -fd) > 0.9999


class TestPcStep:
    def test_no_move_at_joint_critical_point(self):
        w = mlp_weights(0.5, -2.0)
        new = pc_step(ONE_MLP, w, Precisions.ones(ONE_MLP),
                      Batch([[1.0]], [[-1.0]]), 0.2, tight_schedule())
        assert np.allclose(new.flat(), w.flat(), atol=1e-12)

    def test_hand_example(self):
        new = pc_step(ONE_MLP, mlp_weights(1.0, 1.0), Precisions.ones(ONE_MLP),
                      Batch([[1.0]], [[-1.0]]), 0.2, tight_schedule())
        assert np.allclose(new.flat(), [0.8, 1.0], atol=1e-8)

    def test_direction_matches_equilibrated_gradient(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            w1, w2 = rng.uniform(-1, 1, size=2)
            batch = sample_regression(TASK, 32, draw=int(rng.integers(1, 100)))
            w = mlp_weights(w1, w2)
            delta = (
                pc_step(ONE_MLP, w, Precisions.ones(ONE_MLP), batch, 0.2, tight_schedule()).flat()
                - w.flat()
            )
            g = equilibrated_gradient_1mlp([w1, w2], batch)
            if np.linalg.norm(g) < 1e-12:
                continue
            assert cosine_similarity(delta, -g) > 0.9999


class TestTrnStep:
    def test_no_move_at_zero_gradient(self):
        new = trn_step_1mlp(np.array([0.5, -2.0]), Batch([[1.0]], [[-1.0]]), 2.0, 0.2)
        assert np.allclose(new, [0.5, -2.0])

    def test_saddle_is_fixed_point(self):
        new = trn_step_1mlp(np.zeros(2), Batch([[1.0]], [[-1.0]]), 2.0, 0.2)
        assert np.allclose(new, 0.0)

    def test_matches_dense_solve(self):
        batch = Batch([[1.0]], [[-1.0]])
        w = np.array([0.5, 0.5])
        from pctrust.analysis import hessians_1mlp, loss_gradient_1mlp

        H, _ = hessians_1mlp(w, batch)
        g = loss_gradient_1mlp(w, batch)
        want = w - 0.2 * np.linalg.solve(H + 2.0 * np.eye(2), g)
        assert np.allclose(trn_step_1mlp(w, batch, 2.0, 0.2), want, atol=1e-12)


class TestTrain:
    def test_toy_run_reaches_test_tolerance(self):
        cfg = TrainConfig(
            algorithm="bp", learning_rate=0.2, batch_size=64, max_batches=2000,
            stop_train_loss=None, stop_test_loss=1e-3, plateau_window=None, seed=3,
        )
        rec = train(ONE_MLP, cfg, TASK)
        assert rec.stop_reason == "test_tol"
        assert rec.test_losses[-1] < 1e-3

    def test_pc_toy_run_reaches_test_tolerance(self):
        cfg = TrainConfig(
            algorithm="pc", learning_rate=0.2, batch_size=64, max_batches=2000,
            inference=InferenceSchedule(step_size=0.1, max_iters=20, halving_count=0),
            stop_train_loss=None, stop_test_loss=1e-3, plateau_window=None, seed=3,
        )
        rec = train(ONE_MLP, cfg, TASK)
        assert rec.stop_reason == "test_tol"
        assert rec.energies is not None and len(rec.energies) == rec.batches - 1

    def test_divergence_is_recorded_not_raised(self):
        cfg = TrainConfig(algorithm="bp", learning_rate=1e3, batch_size=8,
                          max_batches=50, plateau_window=None, seed=0)
        rec = train(ONE_MLP, cfg, TASK)
        assert rec.stop_reason == "diverged"
        assert rec.batches < 50

    def test_trace_lengths_match_batches(self):
        cfg = TrainConfig(algorithm="bp", learning_rate=0.05, batch_size=16,
                          max_batches=37, stop_train_loss=None, plateau_window=None, seed=1)
        rec = train(ONE_MLP, cfg, TASK)
        assert rec.stop_reason == "max_batches"
        assert rec.batches == 37
        assert len(rec.train_losses) == len(rec.test_losses) == 37

    def test_plateau_rule_fires(self):
        # Tiny learning rate cannot improve the windowed mean.
        cfg = TrainConfig(algorithm="bp", learning_rate=1e-9, batch_size=8,
                          max_batches=300, stop_train_loss=None, plateau_window=50, seed=2)
        rec = train(ONE_MLP, cfg, TASK)
        assert rec.stop_reason == "plateau"
        assert rec.batches % 50 == 0

    def test_deterministic_given_seed(self):
        cfg = TrainConfig(algorithm="pc", learning_rate=0.2, batch_size=16, max_batches=30,
                          inference=InferenceSchedule(step_size=0.1, max_iters=50, halving_count=0),
                          stop_train_loss=None, plateau_window=None, seed=9)
        a = train(ONE_MLP, cfg, TASK)
        b = train(ONE_MLP, cfg, TASK)
        assert np.array_equal(a.train_losses, b.train_losses)
        assert np.array_equal(a.test_losses, b.test_losses)
        assert all(np.array_equal(x, y) for x, y in zip(a.final_weights, b.final_weights))

    def test_weight_trajectory_recording(self):
        cfg = TrainConfig(algorithm="bp", learning_rate=0.1, batch_size=8, max_batches=10,
                          stop_train_loss=None, plateau_window=None, record_weights=True, seed=1)
        rec = train(ONE_MLP, cfg, TASK)
        assert rec.weight_trajectory.shape == (10, 2)

    def test_saddle_escape_ordering(self):
        # From a saddle-adjacent start, halving the initial loss takes
        # strictly fewer updates with inference-based training.
        for seed in (0, 1):
            counts = {}
            for alg in ("bp", "pc"):
                kwargs = dict(
                    algorithm=alg, learning_rate=0.2, batch_size=64,
                    max_batches=400, stop_train_loss=None, plateau_window=None, seed=seed,
                )
                if alg == "pc":
                    kwargs["inference"] = InferenceSchedule(step_size=0.1, max_iters=100,
                                                            halving_count=0)
                rec = train(ONE_MLP, TrainConfig(**kwargs), TASK,
                            initial_weights=mlp_weights(1e-3, 1e-3))
                half = 0.5 * rec.train_losses[0]
                below = np.nonzero(rec.train_losses < half)[0]
                counts[alg] = int(below[0]) if below.size else rec.batches + 1
            assert counts["pc"] < counts["bp"]


class TestGridSearch:
    def test_single_point_grid(self):
        cfg = TrainConfig(algorithm="bp", learning_rate=0.1, batch_size=16,
                          max_batches=50, stop_train_loss=0.01, plateau_window=None)
        res = grid_search(ONE_MLP, cfg, [0.2], TASK, [0])
        assert isinstance(res, GridSearchResult)
        assert res.best_lr == 0.2
        assert len(res.sweep) == 1

    def test_sweep_table_complete(self):
        cfg = TrainConfig(algorithm="bp", learning_rate=0.1, batch_size=8,
                          max_batches=30, stop_train_loss=None, plateau_window=None)
        lrs = [1e-3, 1e-2, 1e-1]
        res = grid_search(ONE_MLP, cfg, lrs, TASK, [0, 1])
        assert len(res.sweep) == 6
        assert sum(row["winner"] for row in res.table()) == 2

    def test_winner_has_lowest_mean_final_loss(self):
        cfg = TrainConfig(algorithm="bp", learning_rate=0.1, batch_size=16,
                          max_batches=60, stop_train_loss=None, plateau_window=None)
        lrs = [1e-4, 1e-2, 0.2]
        res = grid_search(ONE_MLP, cfg, lrs, TASK, [0, 1])
        by_lr = {}
        for rec in res.sweep:
            by_lr.setdefault(rec.learning_rate, []).append(rec.train_losses[-1])
        means = {lr: np.mean(v) for lr, v in by_lr.items()}
        assert means[res.best_lr] == min(means.values())

    def test_empty_grid_rejected(self):
        cfg = TrainConfig(algorithm="bp", learning_rate=0.1)
        with pytest.raises(ValueError):
            grid_search(ONE_MLP, cfg, [], TASK, [0])


class TestCsvExport:
    def test_rows_schema(self):
        cfg = TrainConfig(algorithm="pc", learning_rate=0.2, batch_size=8, max_batches=5,
                          inference=InferenceSchedule(max_iters=30, halving_count=0),
                          stop_train_loss=None, plateau_window=None, seed=4)
        rec = train(ONE_MLP, cfg, TASK)
        rows = record_csv_rows(rec, depth=2, activation="linear")
        assert len(rows) == rec.batches
        assert set(rows[0]) == {
            "step", "train_loss", "test_loss", "energy",
            "algorithm", "lr", "depth", "activation", "seed",
        }
        assert rows[0]["energy"] != ""
