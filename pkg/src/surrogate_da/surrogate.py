"""Surrogate observation operator ``h0 + correction`` and its training data."""
from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix
from .model import rk4_step
from .neural import MlpNetwork, TrainingDataset, forward
from .observe import LinearObservationOperator, apply


@dataclass(frozen=True, eq=False)
class SurrogateOperator:
    """Fixed linear base plus an optional network correction.

    ``lineage`` records the ``(m, j)`` position in the sub-interval loop
    that produced the operator; ``(0, 0)`` is the untrained base.
    """

    base: LinearObservationOperator
    correction: MlpNetwork = None
    lineage: tuple = (0, 0)

    def __post_init__(self):
        if self.correction is not None:
            sizes = self.correction.layer_sizes
            if sizes[0] != self.base.n_state or sizes[-1] != self.base.n_obs:
                raise ValueError(
                    f"correction maps {sizes[0]}->{sizes[-1]}, base maps "
                    f"{self.base.n_state}->{self.base.n_obs}")

    @property
    def n_state(self):
        return self.base.n_state

    @property
    def n_obs(self):
        return self.base.n_obs

    def __call__(self, x):
        return surrogate_apply(self, x)


def surrogate_apply(s, x):
    out = apply(s.base, x)
    if s.correction is not None:
        out = out + forward(s.correction, x)
    return out


def predict_observable(s, estimate_prev, p):
    """Observation predicted one step ahead from a previous filter estimate."""
    return surrogate_apply(s, rk4_step(estimate_prev, p))


def build_dataset(obs, estimates_prev, base, p, lineage=None):
    """Training pairs for the correction network.

    Row ``t`` pairs ``estimates_prev[t]`` (the estimate one step before
    ``obs[t]``) with ``obs[t]``. The input is the deterministic forecast
    ``f(estimate)`` and the target is ``obs - base(f(estimate))``; the
    residual is always taken against the fixed base operator.
    """
    obs = as_matrix(obs, n_cols=base.n_obs, name="obs", allow_1d=True)
    prev = as_matrix(estimates_prev, n_cols=base.n_state, name="estimates_prev", allow_1d=True)
    if obs.shape[0] != prev.shape[0]:
        raise ValueError(f"{obs.shape[0]} observations vs {prev.shape[0]} previous estimates")
    inputs = rk4_step(prev, p)
    return TrainingDataset(inputs, obs - apply(base, inputs), lineage=lineage)


def save_dataset_csv(data, path):
    """One row per pair: input columns ``x1..xk`` then target columns ``r1..rl``."""
    k, l = data.inputs.shape[1], data.targets.shape[1]
    header = ",".join([f"x{i + 1}" for i in range(k)] + [f"r{i + 1}" for i in range(l)])
    np.savetxt(path, np.hstack([data.inputs, data.targets]), delimiter=",",
               header=header, comments="", fmt="%.17g")
