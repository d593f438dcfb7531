import numpy as np
import pytest
from sklearn.base import clone

from surrogate_da.exceptions import DivergedTrainingError
from surrogate_da.neural import (MLPCorrection, MlpNetwork, OptimizerConfig, TrainingDataset,
                                 fold_standardization, forward, gradient, init_network,
                                 load_network, relaxed_cost, save_network, sgd_step, train,
                                 zero_network)


def random_net(sizes, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    return MlpNetwork(tuple(scale * rng.normal(size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])),
                      tuple(scale * rng.normal(size=b) for b in sizes[1:]))


def random_data(n, k, l, seed=1):
    rng = np.random.default_rng(seed)
    return TrainingDataset(rng.normal(size=(n, k)), rng.normal(size=(n, l)))


def chain_oracle(net, x):
    # straight-line evaluation, one sample at a time, explicit loops
    h = list(x)
    L = len(net.weights)
    for layer in range(L):
        W, b = net.weights[layer], net.biases[layer]
        out = []
        for j in range(W.shape[1]):
            s = b[j]
            for i in range(W.shape[0]):
                s += h[i] * W[i, j]
            out.append(np.tanh(s) if layer < L - 1 else s)
        h = out
    return np.array(h)


def fd_gradient(net, data, coords, step=1e-5):
    theta = net.flat()
    out = []
    for c in coords:
        tp, tm = theta.copy(), theta.copy()
        tp[c] += step
        tm[c] -= step
        out.append((relaxed_cost(net.with_flat(tp), data) - relaxed_cost(net.with_flat(tm), data))
                   / (2 * step))
    return np.array(out)


class TestInit:
    def test_deterministic(self):
        a, b = init_network((8, 80, 8), 3), init_network((8, 80, 8), 3)
        np.testing.assert_array_equal(a.flat(), b.flat())

    def test_biases_zero(self):
        net = init_network((8, 80, 80, 8), 0)
        assert all(np.all(b == 0) for b in net.biases)

    def test_weight_variance(self):
        net = init_network((8, 80, 80, 8), 0)
        w = net.weights[1]
        s2 = 6.0 / 160
        assert abs(w.var() / (s2 / 3) - 1) < 0.2
        assert np.abs(w).max() <= np.sqrt(s2)

    def test_needs_two_layers(self):
        with pytest.raises(ValueError):
            init_network((8,), 0)

    def test_default_architecture(self):
        est = MLPCorrection()
        assert est.hidden_layer_sizes == (80, 80, 80, 80)


class TestForward:
    def test_zero_net(self):
        np.testing.assert_array_equal(forward(zero_network((8, 16, 8)), np.ones(8)), np.zeros(8))

    def test_single_layer_is_affine(self):
        net = MlpNetwork((np.eye(4) * 2.0,), (np.zeros(4),))
        x = np.array([10.0, -3.0, 0.5, 7.0])
        np.testing.assert_array_equal(forward(net, x), 2 * x)

    def test_against_chain_oracle(self):
        net = random_net((5, 7, 6, 3), seed=4)
        X = np.random.default_rng(2).normal(size=(10, 5))
        got = forward(net, X)
        want = np.array([chain_oracle(net, x) for x in X])
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(zero_network((8, 4, 8)), np.ones(7))

    def test_inconsistent_layers_rejected(self):
        with pytest.raises(ValueError):
            MlpNetwork((np.zeros((3, 4)), np.zeros((5, 2))), (np.zeros(4), np.zeros(2)))


class TestCost:
    def test_zero(self):
        data = TrainingDataset(np.ones((4, 3)), np.zeros((4, 2)))
        assert relaxed_cost(zero_network((3, 5, 2)), data) == 0.0

    def test_single_pair(self):
        z = np.array([3.0, -4.0])
        data = TrainingDataset(np.ones((1, 3)), z[None])
        assert relaxed_cost(zero_network((3, 2)), data) == 12.5

    def test_against_direct_sum(self):
        net = random_net((3, 4, 2), seed=7)
        data = random_data(6, 3, 2)
        total = 0.0
        for x, y in zip(data.inputs, data.targets):
            r = y - chain_oracle(net, x)
            total += sum(v * v for v in r)
        assert relaxed_cost(net, data) == pytest.approx(0.5 * total, rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            relaxed_cost(zero_network((3, 2)), TrainingDataset(np.zeros((0, 3)), np.zeros((0, 2))))


class TestGradient:
    def test_zero_residual(self):
        net = random_net((3, 4, 2), seed=1)
        X = np.random.default_rng(0).normal(size=(5, 3))
        g = gradient(net, TrainingDataset(X, forward(net, X)))
        assert np.all(g.flat() == 0)

    def test_linear_least_squares(self):
        rng = np.random.default_rng(5)
        X, Y = rng.normal(size=(20, 4)), rng.normal(size=(20, 3))
        W, b = rng.normal(size=(4, 3)), rng.normal(size=3)
        g = gradient(MlpNetwork((W,), (b,)), TrainingDataset(X, Y))
        R = X @ W + b - Y
        np.testing.assert_allclose(g.weights[0], X.T @ R, rtol=1e-12)
        np.testing.assert_allclose(g.biases[0], R.sum(axis=0), rtol=1e-12)

    def test_finite_differences_three_layer(self):
        net = random_net((4, 6, 5, 3), seed=2)
        data = random_data(7, 4, 3)
        coords = np.arange(net.n_params)
        fd = fd_gradient(net, data, coords)
        an = gradient(net, data).flat()
        np.testing.assert_allclose(an, fd, rtol=1e-4, atol=1e-7)

    def test_permutation_invariance(self):
        net = random_net((4, 6, 3), seed=3)
        data = random_data(30, 4, 3)
        perm = np.random.default_rng(0).permutation(30)
        g1 = gradient(net, data).flat()
        g2 = gradient(net, TrainingDataset(data.inputs[perm], data.targets[perm])).flat()
        np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-12)


class TestSgd:
    def test_zero_gradient_noop(self):
        net = random_net((3, 4, 2))
        out = sgd_step(net, zero_network((3, 4, 2)), OptimizerConfig(learning_rate=0.1))
        np.testing.assert_array_equal(out.flat(), net.flat())

    def test_zero_rate_noop(self):
        net = random_net((3, 4, 2))
        g = random_net((3, 4, 2), seed=9)
        out = sgd_step(net, g, OptimizerConfig(learning_rate=0.0))
        np.testing.assert_array_equal(out.flat(), net.flat())

    def test_quadratic_one_step(self):
        # cost 1/2 (3 - p)^2 from one pair x=1, y=3 through a 1x1 linear net
        net = MlpNetwork((np.zeros((1, 1)),), (np.zeros(1),))
        data = TrainingDataset([[1.0]], [[3.0]])
        g = gradient(net, data)
        g = MlpNetwork(g.weights, (np.zeros(1),))  # freeze the bias
        out = sgd_step(net, g, OptimizerConfig(learning_rate=0.1))
        assert out.weights[0][0, 0] == pytest.approx(0.3, abs=1e-15)


class TestTrain:
    def test_zero_epochs(self):
        net = random_net((3, 4, 2))
        assert train(net, random_data(10, 3, 2), OptimizerConfig(epochs=0)) is net

    def test_zero_realizable(self):
        net = zero_network((3, 4, 2))
        data = TrainingDataset(np.random.default_rng(0).normal(size=(10, 3)), np.zeros((10, 2)))
        assert relaxed_cost(train(net, data, OptimizerConfig(epochs=5)), data) == 0.0

    def test_fits_linear_target(self):
        x = np.linspace(-1, 1, 100)[:, None]
        data = TrainingDataset(x, 2 * x)
        net = train(init_network((1, 8, 1), 0), data,
                    OptimizerConfig(learning_rate=0.01, batch_size=10, epochs=500, shuffle_seed=1))
        assert 2 * relaxed_cost(net, data) / 100 < 1e-2

    def test_never_worse_than_input(self):
        data = random_data(50, 3, 2, seed=4)
        net = random_net((3, 10, 2), seed=6)
        out = train(net, data, OptimizerConfig(learning_rate=0.05, batch_size=7, epochs=30))
        assert relaxed_cost(out, data) <= relaxed_cost(net, data)

    def test_deterministic(self):
        data = random_data(50, 3, 2, seed=4)
        net = random_net((3, 10, 2), seed=6)
        cfg = OptimizerConfig(learning_rate=0.01, batch_size=8, epochs=5, shuffle_seed=3)
        np.testing.assert_array_equal(train(net, data, cfg).flat(), train(net, data, cfg).flat())

    def test_divergence_names_epoch(self):
        # linear net with a step far beyond 2 / curvature: each update multiplies the error
        data = TrainingDataset(np.full((20, 2), 100.0), np.full((20, 2), 1e3))
        net = MlpNetwork((np.zeros((2, 2)),), (np.zeros(2),))
        with pytest.raises(DivergedTrainingError) as info:
            train(net, data, OptimizerConfig(learning_rate=10.0, batch_size=1, epochs=50))
        assert info.value.epoch >= 1
        assert f"epoch {info.value.epoch}" in str(info.value)

    def test_batch_clamped_to_dataset(self):
        data = random_data(5, 3, 2)
        out = train(zero_network((3, 4, 2)), data,
                    OptimizerConfig(learning_rate=0.01, batch_size=64, epochs=3))
        assert relaxed_cost(out, data) <= relaxed_cost(zero_network((3, 4, 2)), data)


def test_checkpoint_roundtrip(tmp_path):
    net = random_net((8, 16, 16, 8), seed=11)
    path = tmp_path / "nn_m1_j1.sdann"
    save_network(net, path)
    raw = path.read_bytes()
    assert raw[:6] == b"SDANN1"
    assert len(raw) == 6 + 8 * 5 + 8 * net.n_params
    back = load_network(path)
    assert back.layer_sizes == (8, 16, 16, 8)
    np.testing.assert_array_equal(back.flat(), net.flat())


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.sdann"
    path.write_bytes(b"NOPE00" + bytes(16))
    with pytest.raises(ValueError):
        load_network(path)


def test_fold_standardization_equivalent():
    net = random_net((3, 5, 2), seed=8)
    mean, scale = np.array([1.0, -2.0, 0.5]), np.array([2.0, 0.5, 3.0])
    X = np.random.default_rng(1).normal(size=(10, 3))
    np.testing.assert_allclose(forward(fold_standardization(net, mean, scale), X),
                               forward(net, (X - mean) / scale), rtol=1e-12, atol=1e-12)


class TestEstimator:
    def test_get_params_and_clone(self):
        est = MLPCorrection(hidden_layer_sizes=(4,), epochs=3)
        params = clone(est).get_params()
        assert params["hidden_layer_sizes"] == (4,) and params["epochs"] == 3

    def test_fit_predict_improves(self):
        rng = np.random.default_rng(0)
        X = rng.normal(3.0, 4.0, size=(300, 2))
        y = X @ np.array([[0.5, 0.0], [0.2, -0.3]])
        est = MLPCorrection(hidden_layer_sizes=(16,), learning_rate=1e-3, batch_size=16,
                            epochs=100).fit(X, y)
        assert est.train_cost_ < 0.05 * est.initial_cost_
        # predict acts on raw inputs through the folded network
        assert np.mean((est.predict(X) - y) ** 2) < 0.05 * np.mean(y ** 2)

    def test_zero_output_init_starts_at_zero(self):
        est = MLPCorrection(hidden_layer_sizes=(4,), epochs=0).fit(np.ones((5, 3)), np.ones((5, 2)))
        np.testing.assert_array_equal(est.predict(np.ones((2, 3))), np.zeros((2, 2)))

    def test_warm_start_continues(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
        est = MLPCorrection(hidden_layer_sizes=(6,), learning_rate=1e-3, epochs=5, warm_start=True)
        est.fit(X, y)
        first = est.raw_network_
        est.fit(X, y)
        assert est.n_fits_ == 2
        assert est.initial_cost_ == pytest.approx(relaxed_cost(first, TrainingDataset(
            (X - est.input_mean_) / est.input_scale_, y)))

    def test_predict_before_fit(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            MLPCorrection().predict(np.ones((1, 8)))
