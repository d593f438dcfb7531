"""Linear observation operators and twin-experiment data generation."""
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive_int
from .model import forward_map, spin_up


@dataclass(frozen=True, eq=False)
class LinearObservationOperator:
    """``h(x) = matrix @ x`` for an ``(l, k)`` matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"operator matrix must be 2-D, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("operator matrix contains non-finite entries")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_obs(self):
        return self.matrix.shape[0]

    @property
    def n_state(self):
        return self.matrix.shape[1]

    def __call__(self, x):
        return apply(self, x)


def make_banded_operator(k, c1, c2, circulant=False):
    """Tridiagonal ``k x k`` operator with ``c1`` on the diagonal and ``c2`` beside it.

    The corner entries are zero unless ``circulant`` is set.
    """
    check_positive_int(k, "k", minimum=2)
    H = c1 * np.eye(k) + c2 * (np.eye(k, k=1) + np.eye(k, k=-1))
    if circulant and k > 2:
        H[0, -1] = H[-1, 0] = c2
    return LinearObservationOperator(H)


def identity_operator(k):
    return make_banded_operator(k, 1.0, 0.0)


def apply(H, x):
    """Matrix-vector product; a batch ``(n, k)`` maps to ``(n, l)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != H.n_state:
        raise ValueError(f"state has shape {x.shape}, operator expects {H.n_state} columns")
    return x @ H.matrix.T


def generate_twin_data(p, H, q, r, T, seed):
    """Simulate a truth trajectory and its noisy observations.

    Parameters
    ----------
    p : Lorenz96Params
    H : LinearObservationOperator
        True operator; used here and in evaluation only.
    q, r : NoiseSpec
        System and observation noise.
    T : int
        Number of assimilation steps.
    seed : int
        Master seed. System and observation noise use independent child streams.

    Returns
    -------
    truth : ndarray, shape (T, k)
    obs : ndarray, shape (T, l)
    """
    check_positive_int(T, "T")
    if H.n_state != p.k or r.dimension != H.n_obs:
        raise ValueError("operator / noise dimensions inconsistent with the model")
    sys_ss, obs_ss = np.random.SeedSequence(seed).spawn(2)
    sys_rng = np.random.default_rng(sys_ss)
    obs_rng = np.random.default_rng(obs_ss)

    x = spin_up(p)
    truth = np.empty((T, p.k))
    for t in range(T):
        x = forward_map(x, p, q, sys_rng)
        truth[t] = x
    obs = apply(H, truth) + r.sample(obs_rng, T)
    return truth, obs
