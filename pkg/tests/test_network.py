import numpy as np
import pytest

from pctrust.network import (
    ActivityState,
    Batch,
    NetworkSpec,
    WeightSet,
    bp_grad,
    feedforward,
    init_weights,
    loss,
    predict,
)

from conftest import fd_gradient, random_spec, random_weights, rel_err


ONE_MLP = NetworkSpec((1, 1, 1), ("linear", "linear"))


def mlp_weights(w1, w2):
    return WeightSet([np.array([[w1]]), np.array([[w2]])])


class TestSpecValidation:
    def test_too_few_layers(self):
        with pytest.raises(ValueError):
            NetworkSpec((3,), ())

    def test_activation_count_mismatch(self):
        with pytest.raises(ValueError):
            NetworkSpec((2, 2), ("linear", "tanh"))

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            NetworkSpec((2, 2), ("sigmoid",))

    def test_chain_builder_puts_linear_output(self):
        spec = NetworkSpec.chain(5, "tanh")
        assert spec.layer_widths == (1,) * 6
        assert spec.activations == ("tanh",) * 4 + ("linear",)

    def test_weight_shape_check(self):
        w = WeightSet([np.zeros((2, 3))])
        with pytest.raises(ValueError):
            w.validate(NetworkSpec((2, 2), ("linear",)))

    def test_nonfinite_weights_rejected(self):
        with pytest.raises(ValueError):
            WeightSet([np.array([[np.inf]])])


class TestFeedforward:
    def test_zero_weights_give_zero_activity(self):
        for act in ("linear", "tanh", "relu"):
            spec = NetworkSpec((3, 4, 2), (act, act))
            w = WeightSet([np.zeros((4, 3)), np.zeros((2, 4))])
            state = feedforward(spec, w, np.array([1.0, -2.0, 0.5]))
            assert np.allclose(state.activities[1], 0.0)
            assert np.allclose(state.activities[2], 0.0)

    def test_1mlp_hand_values(self):
        state = feedforward(ONE_MLP, mlp_weights(0.5, -2.0), 1.0)
        assert state.activities[1] == pytest.approx(0.5)
        assert state.activities[2] == pytest.approx(-1.0)

    def test_identity_chain_passthrough(self):
        spec = NetworkSpec((3, 3, 3), ("linear", "linear"))
        w = WeightSet([np.eye(3), np.eye(3)])
        x = np.array([0.3, -1.2, 4.0])
        assert np.allclose(predict(spec, w, x), x)

    def test_only_input_clamped(self):
        state = feedforward(ONE_MLP, mlp_weights(1.0, 1.0), 1.0)
        assert state.clamped == [True, False, False]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            feedforward(ONE_MLP, mlp_weights(1.0, 1.0), np.array([1.0, 2.0]))


class TestLoss:
    def test_zero_at_fit(self):
        spec = NetworkSpec((2, 2), ("linear",))
        w = WeightSet([np.eye(2)])
        x = np.array([[1.0, 2.0], [0.5, -1.0]])
        assert loss(spec, w, Batch(x, x)) == 0.0

    def test_single_sample_value(self):
        # y = -1, yhat = 1 -> 0.5 * (-2)^2 = 2
        assert loss(ONE_MLP, mlp_weights(1.0, 1.0), Batch([[1.0]], [[-1.0]])) == pytest.approx(2.0)

    def test_batch_mean(self):
        b = Batch([[1.0], [2.0]], [[-1.0], [-2.0]])
        # residuals -2 and -4 -> mean of (2, 8) = 5
        assert loss(ONE_MLP, mlp_weights(1.0, 1.0), b) == pytest.approx(5.0)

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            spec = random_spec(rng)
            w = random_weights(spec, rng)
            b = Batch(
                rng.normal(size=(4, spec.n_in)), rng.normal(size=(4, spec.n_out))
            )
            assert loss(spec, w, b) >= 0.0


class TestBpGrad:
    def test_zero_on_solution_manifold(self):
        # w2 * w1 * x = y  ->  residual 0 -> zero gradient
        g = bp_grad(ONE_MLP, mlp_weights(0.5, -2.0), Batch([[1.0]], [[-1.0]]))
        assert np.allclose(g[0], 0.0) and np.allclose(g[1], 0.0)

    def test_1mlp_hand_chain_rule(self):
        g = bp_grad(ONE_MLP, mlp_weights(1.0, 1.0), Batch([[1.0]], [[-1.0]]))
        assert g[0][0, 0] == pytest.approx(2.0)
        assert g[1][0, 0] == pytest.approx(2.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            spec = random_spec(rng)
            w = random_weights(spec, rng)
            b = Batch(
                rng.normal(size=(3, spec.n_in)), rng.normal(size=(3, spec.n_out))
            )
            grads = bp_grad(spec, w, b)

            shapes = [wl.shape for wl in w]

            def loss_of_flat(theta):
                ws, k = [], 0
                for s in shapes:
                    ws.append(theta[k : k + s[0] * s[1]].reshape(s))
                    k += s[0] * s[1]
                return loss(spec, WeightSet(ws), b)

            fd = fd_gradient(loss_of_flat, w.flat(), h=1e-5)
            exact = np.concatenate([g.ravel() for g in grads])
            assert rel_err(exact, fd) < 1e-5


class TestSymmetryAndInit:
    def test_sign_flip_symmetry_even_depth(self):
        # Flipping every weight of an even-depth odd-activation chain leaves
        # the loss unchanged.
        rng = np.random.default_rng(7)
        for act in ("linear", "tanh"):
            for depth in (2, 4):
                spec = NetworkSpec((1,) * (depth + 1), (act,) * (depth - 1) + ("linear",))
                w = random_weights(spec, rng)
                neg = WeightSet([-wl for wl in w])
                b = Batch(rng.normal(size=(5, 1)), rng.normal(size=(5, 1)))
                assert loss(spec, w, b) == pytest.approx(loss(spec, neg, b), abs=0.0)

    def test_uniform_init_bounds_and_determinism(self):
        spec = NetworkSpec((4, 6, 2), ("tanh", "linear"))
        w1 = init_weights(spec, np.random.default_rng(3), "uniform")
        w2 = init_weights(spec, np.random.default_rng(3), "uniform")
        for a, b in zip(w1, w2):
            assert np.array_equal(a, b)
            assert np.all(np.abs(a) <= 1.0)

    def test_fan_in_init_bounds(self):
        spec = NetworkSpec((100, 50), ("linear",))
        w = init_weights(spec, np.random.default_rng(0), "fan_in")
        assert np.all(np.abs(w[0]) <= 0.1)

    def test_feedforward_deterministic(self):
        spec = NetworkSpec((2, 3, 1), ("relu", "linear"))
        w = random_weights(spec, np.random.default_rng(1))
        x = np.array([0.2, -0.4])
        assert np.array_equal(predict(spec, w, x), predict(spec, w, x))


class TestActivityState:
    def test_input_must_be_clamped(self):
        with pytest.raises(ValueError):
            ActivityState([np.zeros((1, 1)), np.zeros((1, 1))], [False, False])

    def test_batch_promotion(self):
        st = ActivityState([np.array([1.0]), np.array([2.0])])
        assert st.activities[0].shape == (1, 1)
        assert st.batch_size == 1
