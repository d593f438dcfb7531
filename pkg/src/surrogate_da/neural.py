"""Fully connected tanh network used as the additive operator correction.

Weights of layer ``i`` are stored with shape ``(fan_in, fan_out)`` so a batch
``X`` of shape ``(n, fan_in)`` maps to ``X @ W + b``. Hidden layers use tanh,
the output layer is affine.
"""
import logging
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, check_positive_int
from .exceptions import DivergedTrainingError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SDANN1"
DEFAULT_HIDDEN = (80, 80, 80, 80)


@dataclass(frozen=True, eq=False)
class MlpNetwork:
    weights: tuple
    biases: tuple

    def __post_init__(self):
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        if len(weights) == 0 or len(weights) != len(biases):
            raise ValueError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input size {w.shape[0]} != previous output")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def layer_sizes(self):
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self):
        return np.concatenate([a.ravel() for wb in zip(self.weights, self.biases) for a in wb])

    def with_flat(self, theta):
        """New network with the same layout and parameters taken from ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(theta[pos:pos + b.size])
            pos += b.size
        return MlpNetwork(tuple(weights), tuple(biases))

    def __call__(self, X):
        return forward(self, X)


@dataclass(frozen=True, eq=False)
class TrainingDataset:
    """Input/target pairs stored as two aligned arrays."""

    inputs: np.ndarray
    targets: np.ndarray
    lineage: tuple = None

    def __post_init__(self):
        X = as_matrix(self.inputs, name="inputs", allow_1d=True)
        Y = as_matrix(self.targets, name="targets", allow_1d=True)
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    shuffle_seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.epochs, "epochs", minimum=0)


def init_network(layer_sizes, seed):
    """Glorot-uniform weights, zero biases."""
    sizes = [check_positive_int(s, "layer size") for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("a network needs at least an input and an output layer")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(tuple(weights), tuple(biases))


def zero_network(layer_sizes):
    sizes = list(layer_sizes)
    return MlpNetwork(
        tuple(np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])),
        tuple(np.zeros(b) for b in sizes[1:]),
    )


def _forward_cache(net, X):
    acts = [X]
    h = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def forward(net, X):
    """Evaluate the network on one input ``(k,)`` or a batch ``(n, k)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (1, 2) or X.shape[-1] != net.weights[0].shape[0]:
        raise ValueError(f"input shape {X.shape} incompatible with input size {net.weights[0].shape[0]}")
    return _forward_cache(net, X)[-1]


def relaxed_cost(net, data):
    """Half the summed squared residual between targets and network outputs."""
    if len(data) == 0:
        raise ValueError("relaxed cost needs a nonempty dataset")
    resid = data.targets - forward(net, data.inputs)
    return 0.5 * float(np.sum(resid * resid))


def gradient(net, batch):
    """Backpropagated gradient of :func:`relaxed_cost` on ``batch``.

    Returned as an :class:`MlpNetwork` holding the partial derivatives.
    """
    if len(batch) == 0:
        raise ValueError("gradient needs a nonempty batch")
    acts = _forward_cache(net, batch.inputs)
    delta = acts[-1] - batch.targets
    gw, gb = [None] * len(net.weights), [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            # acts[i] is tanh output of layer i-1
            delta = (delta @ net.weights[i].T) * (1.0 - acts[i] ** 2)
    return MlpNetwork(tuple(gw), tuple(gb))


def sgd_step(net, grad, cfg):
    """Plain descent step ``p - learning_rate * grad`` on every parameter."""
    lr = cfg.learning_rate
    if [w.shape for w in grad.weights] != [w.shape for w in net.weights]:
        raise ValueError("gradient layout does not match the network")
    return MlpNetwork(
        tuple(w - lr * g for w, g in zip(net.weights, grad.weights)),
        tuple(b - lr * g for b, g in zip(net.biases, grad.biases)),
    )


def train(net, data, cfg):
    """Shuffled mini-batch gradient descent on the relaxed cost.

    Returns the network with the lowest full-dataset cost observed at an
    epoch boundary (the input network counts as epoch 0), so the result
    never has a higher cost than ``net``.
    """
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if cfg.epochs == 0:
        return net
    batch = min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.shuffle_seed)
    best, best_cost = net, relaxed_cost(net, data)
    X, Y = data.inputs, data.targets
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                g = gradient(net, _Batch(X[idx], Y[idx]))
                net = _unchecked_step(net, g, cfg.learning_rate)
            cost = _cost(net, X, Y)
        if not np.isfinite(cost):
            raise DivergedTrainingError(f"relaxed cost became non-finite in epoch {epoch}", epoch=epoch)
        if cost < best_cost:
            best, best_cost = net, cost
        if epoch % 50 == 0:
            logger.debug("epoch %d cost %.6g (best %.6g)", epoch, cost, best_cost)
    return MlpNetwork(best.weights, best.biases)


class _Batch:
    # lightweight view used inside the training loop; skips validation
    __slots__ = ("inputs", "targets")

    def __init__(self, inputs, targets):
        self.inputs, self.targets = inputs, targets

    def __len__(self):
        return self.inputs.shape[0]


class _RawNet:
    __slots__ = ("weights", "biases")

    def __init__(self, weights, biases):
        self.weights, self.biases = weights, biases


def _unchecked_step(net, g, lr):
    return _RawNet(
        tuple(w - lr * gw for w, gw in zip(net.weights, g.weights)),
        tuple(b - lr * gb for b, gb in zip(net.biases, g.biases)),
    )


def _cost(net, X, Y):
    r = Y - _forward_cache(net, X)[-1]
    return 0.5 * float(np.sum(r * r))


# -- checkpoint files ------------------------------------------------------

def save_network(net, path):
    """Write ``net`` in the SDANN1 layout.

    Layout (all little-endian): 6-byte magic ``SDANN1``, uint64 layer count
    ``L``, ``L`` uint64 layer sizes, then for each layer its weight matrix
    (``fan_in x fan_out``, row-major) followed by its bias, as float64.
    """
    sizes = net.layer_sizes
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(f"<Q{len(sizes)}Q", len(sizes), *sizes))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_network(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an SDANN1 checkpoint")
    (n_layers,) = struct.unpack_from("<Q", raw, 6)
    sizes = struct.unpack_from(f"<{n_layers}Q", raw, 14)
    pos = 14 + 8 * n_layers
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=pos)
        pos += 8 * w.size
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=pos)
        pos += 8 * b.size
        weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return MlpNetwork(tuple(weights), tuple(biases))


def fold_standardization(net, mean, scale):
    """Absorb ``(x - mean) / scale`` into the first layer of ``net``."""
    w0 = net.weights[0] / scale[:, None]
    b0 = net.biases[0] - (mean / scale) @ net.weights[0]
    return MlpNetwork((w0,) + net.weights[1:], (b0,) + net.biases[1:])


class MLPCorrection(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`train` for the additive correction.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
    learning_rate, batch_size, epochs :
        Passed to :class:`OptimizerConfig`.
    standardize : bool
        Train on inputs shifted and scaled by the statistics of the first
        dataset seen. The transform is folded into the first layer of
        ``network_``, so ``network_`` always acts on raw inputs.
    zero_output_init : bool
        Start with a zero output layer so the fresh network is exactly zero.
    random_state : int
        Seeds both the weight initialisation and the mini-batch shuffling.
    warm_start : bool
        Continue from the previous fit instead of drawing fresh weights.
    """

    def __init__(self, hidden_layer_sizes=DEFAULT_HIDDEN, learning_rate=1e-5,
                 batch_size=64, epochs=200, standardize=True, zero_output_init=True,
                 random_state=0, warm_start=False):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.standardize = standardize
        self.zero_output_init = zero_output_init
        self.random_state = random_state
        self.warm_start = warm_start

    def _initial_network(self, sizes):
        net = init_network(sizes, self.random_state)
        if self.zero_output_init:
            net = MlpNetwork(net.weights[:-1] + (np.zeros_like(net.weights[-1]),), net.biases)
        return net

    def fit(self, X, y):
        data = TrainingDataset(X, y)
        sizes = (data.inputs.shape[1], *self.hidden_layer_sizes, data.targets.shape[1])
        if self.warm_start and hasattr(self, "raw_network_"):
            if self.raw_network_.layer_sizes != sizes:
                raise ValueError(f"warm start layout {self.raw_network_.layer_sizes} != {sizes}")
            net = self.raw_network_
        else:
            net = self._initial_network(sizes)
            self.n_fits_ = 0
            if self.standardize:
                self.input_mean_ = data.inputs.mean(axis=0)
                sd = data.inputs.std(axis=0)
                self.input_scale_ = np.where(sd > 0, sd, 1.0)
            else:
                self.input_mean_ = np.zeros(sizes[0])
                self.input_scale_ = np.ones(sizes[0])
        scaled = TrainingDataset((data.inputs - self.input_mean_) / self.input_scale_, data.targets)
        cfg = OptimizerConfig(self.learning_rate, self.batch_size, self.epochs,
                              shuffle_seed=_fit_seed(self.random_state, self.n_fits_))
        self.initial_cost_ = relaxed_cost(net, scaled)
        self.raw_network_ = train(net, scaled, cfg)
        self.network_ = fold_standardization(self.raw_network_, self.input_mean_, self.input_scale_)
        self.train_cost_ = relaxed_cost(self.raw_network_, scaled)
        self.n_fits_ += 1
        self.n_features_in_ = data.inputs.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = as_matrix(X, n_cols=self.n_features_in_, allow_1d=True)
        return forward(self.network_, X)


def _fit_seed(random_state, n_fit):
    # distinct shuffling per warm-started refit
    return int(np.random.SeedSequence([int(random_state), n_fit, 1]).generate_state(1)[0])
