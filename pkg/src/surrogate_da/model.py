"""Lorenz-96 dynamics, RK4 stepping and the noisy forward map.

All functions accept either a single state of shape ``(k,)`` or a batch of
states of shape ``(n, k)``; the coupling acts on the last axis.
"""
from dataclasses import dataclass

import numpy as np

from ._validation import check_nonnegative, check_positive_int
from .exceptions import NumericalOverflowError


@dataclass(frozen=True)
class Lorenz96Params:
    """Lorenz-96 configuration: state dimension, forcing and step size."""

    k: int = 8
    F: float = 8.0
    dt: float = 0.05

    def __post_init__(self):
        check_positive_int(self.k, "k", minimum=4)
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.isfinite(self.F):
            raise ValueError("F must be finite")


@dataclass(frozen=True)
class NoiseSpec:
    """Isotropic zero-mean Gaussian noise with covariance ``stddev**2 * I``."""

    stddev: float
    dimension: int

    def __post_init__(self):
        check_nonnegative(self.stddev, "stddev")
        check_positive_int(self.dimension, "dimension")

    def sample(self, rng, size=None):
        shape = (self.dimension,) if size is None else (size, self.dimension)
        if self.stddev == 0:
            return np.zeros(shape)
        return self.stddev * rng.standard_normal(shape)


def _check_state(x, p):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != p.k:
        raise ValueError(f"state has shape {x.shape}, expected trailing dimension {p.k}")
    return x


def lorenz96_rhs(x, p):
    """Tendency ``(x[i+1] - x[i-2]) * x[i-1] - x[i] + F`` with cyclic indices."""
    x = _check_state(x, p)
    return _rhs(x, p.F)


def _rhs(x, F):
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + F


def rk4_step(x, p):
    """Advance ``x`` by one classical fourth-order Runge-Kutta step of size ``p.dt``."""
    x = _check_state(x, p)
    dt, F = p.dt, p.F
    k1 = _rhs(x, F)
    k2 = _rhs(x + 0.5 * dt * k1, F)
    k3 = _rhs(x + 0.5 * dt * k2, F)
    k4 = _rhs(x + dt * k3, F)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError("RK4 step produced non-finite state")
    return out


def integrate(x, p, n_steps):
    """Apply :func:`rk4_step` ``n_steps`` times."""
    for _ in range(n_steps):
        x = rk4_step(x, p)
    return np.asarray(x, dtype=np.float64)


def forward_map(x, p, q, rng):
    """Stochastic transition ``f(x) + v`` with ``v ~ N(0, q.stddev**2 I)``."""
    if q.dimension != p.k:
        raise ValueError(f"noise dimension {q.dimension} does not match k={p.k}")
    out = rk4_step(x, p)
    size = None if out.ndim == 1 else out.shape[0]
    return out + q.sample(rng, size)


def spin_up(p, n_steps=1000, perturbation=0.01):
    """Initial truth state: ``(F, ..., F)`` nudged in the first component, then burned in."""
    x = np.full(p.k, p.F, dtype=np.float64)
    x[0] += perturbation
    return integrate(x, p, n_steps)
