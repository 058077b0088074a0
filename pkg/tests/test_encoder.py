import numpy as np
import pytest

from qscreen.encoder import EncoderNetwork, load_weights, save_weights


def finite_difference_grads(net, x, upstream, eps=1e-5):
    """Central differences of <upstream, forward(x)> over every parameter."""
    d_weights, d_biases = [], []
    for w in net.weights:
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + eps
            up = float(upstream @ net.forward(x))
            w[idx] = orig - eps
            dn = float(upstream @ net.forward(x))
            w[idx] = orig
            g[idx] = (up - dn) / (2 * eps)
        d_weights.append(g)
    for b in net.biases:
        g = np.zeros_like(b)
        for idx in np.ndindex(b.shape):
            orig = b[idx]
            b[idx] = orig + eps
            up = float(upstream @ net.forward(x))
            b[idx] = orig - eps
            dn = float(upstream @ net.forward(x))
            b[idx] = orig
            g[idx] = (up - dn) / (2 * eps)
        d_biases.append(g)
    return d_weights, d_biases


def oracle_forward(net, x):
    """Independent layer-by-layer recomputation."""
    h = np.asarray(x, dtype=float)
    for i in range(len(net.weights)):
        pre = net.weights[i] @ h + net.biases[i]
        if i == len(net.weights) - 1:
            h = pre
        elif net.activation == "tanh":
            h = np.tanh(pre)
        else:
            h = np.maximum(pre, 0.0)
    return h


class TestForward:
    def test_zero_parameters_give_zero_output(self):
        dims = [5, 4, 3]
        net = EncoderNetwork(
            dims,
            [np.zeros((4, 5)), np.zeros((3, 4))],
            [np.zeros(4), np.zeros(3)],
        )
        np.testing.assert_array_equal(net.forward(np.ones(5)), np.zeros(3))

    def test_identity_block_selects_leading_entries(self):
        w = np.zeros((2, 5))
        w[0, 0] = 1.0
        w[1, 1] = 1.0
        net = EncoderNetwork([5, 2], [w], [np.zeros(2)])
        x = np.array([3.0, -1.5, 9.0, 0.2, 4.4])
        np.testing.assert_allclose(net.forward(x), x[:2])

    def test_matches_straight_line_recomputation(self):
        rng = np.random.default_rng(31)
        for activation in ("tanh", "relu"):
            net = EncoderNetwork.initialize([7, 11, 5, 3], activation=activation, seed=2)
            for _ in range(10):
                x = rng.normal(size=7)
                np.testing.assert_allclose(net.forward(x), oracle_forward(net, x), atol=1e-12)

    def test_batch_agrees_with_single(self):
        net = EncoderNetwork.initialize([6, 8, 4], seed=3)
        X = np.random.default_rng(5).normal(size=(9, 6))
        batch = net.forward_batch(X)
        for i in range(9):
            np.testing.assert_allclose(batch[i], net.forward(X[i]), atol=1e-14)

    def test_rejects_nan_input(self):
        net = EncoderNetwork.initialize([3, 2], seed=0)
        with pytest.raises(ValueError, match="NaN"):
            net.forward(np.array([1.0, np.nan, 0.0]))

    def test_deterministic_given_weights(self):
        net = EncoderNetwork.initialize([4, 6, 2], seed=9)
        x = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_array_equal(net.forward(x), net.forward(x))

    def test_tanh_output_bounded_on_bounded_inputs(self):
        # hidden activations saturate, so outputs stay finite for huge inputs
        net = EncoderNetwork.initialize([4, 16, 3], activation="tanh", seed=11)
        out = net.forward(np.full(4, 1e6))
        assert np.all(np.isfinite(out))


class TestBackward:
    def test_zero_upstream_gives_zero_gradients(self):
        net = EncoderNetwork.initialize([5, 7, 2], seed=13)
        rec = net.backward(np.ones(5), np.zeros(2))
        for g in rec.d_weights + rec.d_biases:
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_linear_layer_gradient_is_outer_product(self):
        rng = np.random.default_rng(17)
        w = rng.normal(size=(3, 4))
        net = EncoderNetwork([4, 3], [w], [np.zeros(3)])
        x = rng.normal(size=4)
        upstream = rng.normal(size=3)
        rec = net.backward(x, upstream)
        np.testing.assert_allclose(rec.d_weights[0], np.outer(upstream, x), atol=1e-12)
        np.testing.assert_allclose(rec.d_biases[0], upstream, atol=1e-12)

    @pytest.mark.parametrize("dims", [[4, 3], [5, 8, 2], [6, 10, 7, 3], [39, 16, 8]])
    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_matches_finite_differences(self, dims, activation):
        rng = np.random.default_rng(sum(dims))
        net = EncoderNetwork.initialize(dims, activation=activation, seed=19)
        x = rng.normal(size=dims[0])
        upstream = rng.normal(size=dims[-1])
        rec = net.backward(x, upstream)
        fd_w, fd_b = finite_difference_grads(net, x, upstream)
        for got, want in zip(rec.d_weights + rec.d_biases, fd_w + fd_b):
            denom = np.maximum(np.abs(want), 1e-6)
            assert np.max(np.abs(got - want) / denom) < 1e-4

    def test_batch_backward_sums_per_sample(self):
        net = EncoderNetwork.initialize([4, 5, 2], seed=23)
        rng = np.random.default_rng(29)
        X = rng.normal(size=(3, 4))
        U = rng.normal(size=(3, 2))
        total = net.backward_batch(X, U)
        acc = net.zero_gradients()
        for i in range(3):
            acc.add_(net.backward(X[i], U[i]))
        for got, want in zip(total.d_weights + total.d_biases, acc.d_weights + acc.d_biases):
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        net = EncoderNetwork.initialize([4, 2], seed=0)
        with pytest.raises(ValueError, match="upstream"):
            net.backward(np.ones(4), np.ones(3))


class TestWeightFiles:
    def test_round_trip(self, tmp_path):
        net = EncoderNetwork.initialize([39, 64, 32, 8], seed=31)
        path = tmp_path / "enc.bin"
        save_weights(net, path)
        loaded = load_weights(path)
        assert loaded.layer_dims == net.layer_dims
        assert loaded.activation == net.activation
        for a, b in zip(loaded.weights + loaded.biases, net.weights + net.biases):
            np.testing.assert_array_equal(a, b)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_weights(path)

    def test_relu_round_trip(self, tmp_path):
        net = EncoderNetwork.initialize([5, 4, 2], activation="relu", seed=37)
        path = tmp_path / "enc.bin"
        save_weights(net, path)
        assert load_weights(path).activation == "relu"


class TestInitialization:
    def test_seeded_and_deterministic(self):
        a = EncoderNetwork.initialize([6, 5, 3], seed=41)
        b = EncoderNetwork.initialize([6, 5, 3], seed=41)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_bounds_follow_fan_in_fan_out(self):
        net = EncoderNetwork.initialize([100, 50], seed=43)
        a = np.sqrt(6.0 / 150)
        assert np.max(np.abs(net.weights[0])) <= a

    def test_different_seeds_differ(self):
        a = EncoderNetwork.initialize([6, 3], seed=1)
        b = EncoderNetwork.initialize([6, 3], seed=2)
        assert np.max(np.abs(a.weights[0] - b.weights[0])) > 0
