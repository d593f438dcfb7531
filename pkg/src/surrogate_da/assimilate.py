"""Particle filtering with the merging particle filter.

Random draws for assimilation step ``t`` come from a generator keyed on
``(seed, t)``, so filtering a sub-range of steps from a carried-over
ensemble reproduces exactly what a single long run would have drawn.
"""
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, as_vector, check_nonnegative, check_positive_int
from .exceptions import DegenerateLikelihoodError
from .model import forward_map
from .surrogate import surrogate_apply

A1 = 0.75
MERGE_COEFFICIENTS = (A1, (1.0 + np.sqrt(13.0)) / 8.0, (1.0 - np.sqrt(13.0)) / 8.0)


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.particles, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError(f"particles must be (N, k), got {X.shape}")
        if w.shape != (X.shape[0],):
            raise ValueError(f"weights shape {w.shape} does not match {X.shape[0]} particles")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12 * max(1, X.shape[0]) ** 0.5:
            raise ValueError("weights must be nonnegative and sum to one")
        object.__setattr__(self, "particles", X)
        object.__setattr__(self, "weights", w)

    @property
    def size(self):
        return self.particles.shape[0]

    @property
    def ess(self):
        return 1.0 / float(np.sum(self.weights ** 2))


@dataclass(frozen=True)
class MergeCoefficients:
    a: tuple = MERGE_COEFFICIENTS

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.shape != (3,):
            raise ValueError("merging uses exactly three coefficients")
        if abs(a.sum() - 1.0) > 1e-12 or abs((a * a).sum() - 1.0) > 1e-12:
            raise ValueError(f"coefficients {tuple(a)} violate sum(a)=1, sum(a^2)=1")

    @classmethod
    def from_first(cls, a1):
        """Solve the two constraints for ``a2 >= a3`` given ``a1``."""
        s = 1.0 - a1
        disc = 2.0 * (1.0 - a1 * a1) - s * s
        if disc < 0:
            raise ValueError(f"no real merge coefficients with a1={a1}")
        root = np.sqrt(disc)
        return cls((a1, (s + root) / 2.0, (s - root) / 2.0))


def step_rng(seed, t):
    """Generator for assimilation step ``t`` (1-based) of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(t,)))


def init_ensemble(N, k, center, spread, seed):
    check_positive_int(N, "N", minimum=3)
    center = as_vector(center, k, "center")
    spread = check_nonnegative(spread, "spread")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    particles = center + spread * rng.standard_normal((N, k))
    return ParticleEnsemble(particles, np.full(N, 1.0 / N))


def predict_ensemble(e, p, q, rng, dynamics=None):
    """Push every particle through the noisy transition; weights are kept.

    ``dynamics`` replaces the deterministic Lorenz-96 step when given; it maps
    an ``(N, k)`` array to an ``(N, k)`` array.
    """
    if dynamics is None:
        return ParticleEnsemble(forward_map(e.particles, p, q, rng), e.weights)
    if q.dimension != e.particles.shape[1]:
        raise ValueError(f"noise dimension {q.dimension} does not match state dimension")
    return ParticleEnsemble(dynamics(e.particles) + q.sample(rng, e.size), e.weights)


def log_likelihoods(y, s, particles, r):
    resid = y - surrogate_apply(s, particles)
    return -0.5 * np.sum(resid * resid, axis=1) / (r.stddev ** 2)


def reweight(e, y, s, r):
    """Multiply weights by the Gaussian likelihood of ``y`` under the surrogate."""
    if r.stddev <= 0:
        raise ValueError("observation noise stddev must be positive to reweight")
    y = as_vector(y, s.n_obs, "y")
    with np.errstate(divide="ignore"):
        logw = np.log(e.weights) + log_likelihoods(y, s, e.particles, r)
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegenerateLikelihoodError("all particle likelihoods underflowed")
    w = np.exp(logw - top)
    return ParticleEnsemble(e.particles, w / w.sum())


def systematic_resample(weights, N_out, rng):
    """Ancestor indices from one uniform offset and an evenly spaced comb."""
    weights = np.asarray(weights, dtype=np.float64)
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    u = (rng.uniform() + np.arange(N_out)) / N_out
    return np.minimum(np.searchsorted(cdf, u, side="right"), weights.size - 1)


def merge_refilter(e, coefficients=None, rng=None):
    """Replace the weighted ensemble with merged draws of equal weight.

    Three independent systematic resamples are combined particle by
    particle with coefficients ``a``; since ``sum(a) = 1`` and
    ``sum(a**2) = 1`` the first two moments are preserved. Each resample is
    randomly permuted before pairing: the comb returns ancestors in index
    order, and pairing them unshuffled would merge a particle with copies
    of itself and its index neighbours.
    """
    a = (coefficients or MergeCoefficients()).a
    if e.size % 3:
        raise ValueError(f"merging filter needs N divisible by 3, got {e.size}")
    merged = np.zeros_like(e.particles)
    for ai in a:
        idx = systematic_resample(e.weights, e.size, rng)
        merged += ai * e.particles[rng.permutation(idx)]
    return ParticleEnsemble(merged, np.full(e.size, 1.0 / e.size))


def estimate(e):
    """Weighted mean of the particles."""
    return e.weights @ e.particles


@dataclass(frozen=True, eq=False)
class FilterResult:
    estimates: np.ndarray
    ensemble: ParticleEnsemble
    ess: np.ndarray = None
    spread: np.ndarray = None


def run_filter(obs, s, p, q, r, N=None, seed=0, ensemble=None, t0=0,
               coefficients=None, init_center=None, init_spread=1.0, dynamics=None):
    """Merging particle filter over ``obs``.

    Parameters
    ----------
    obs : array, shape (T, l)
        Observations for steps ``t0 + 1 .. t0 + T``.
    s : SurrogateOperator
        Operator used in the likelihood.
    p, q, r :
        Model parameters, system noise and observation noise.
    N : int
        Particle count for a fresh ensemble (ignored when ``ensemble`` given).
    seed : int
        Run seed; step ``t`` draws from ``step_rng(seed, t)``.
    ensemble : ParticleEnsemble, optional
        Starting ensemble at step ``t0``; by default a fresh Gaussian
        ensemble around ``init_center`` (``F`` in every component).
    dynamics : callable, optional
        Deterministic transition used instead of the Lorenz-96 RK4 step.

    Returns
    -------
    FilterResult
        Pre-merge weighted-mean estimates (T, k), the final ensemble, the
        effective sample size after each reweight and the weighted particle
        standard deviation (T, k) at the same point.
    """
    if r.stddev <= 0:
        raise ValueError("observation noise stddev must be positive")
    obs = as_matrix(obs, n_cols=s.n_obs, name="obs", allow_1d=True)
    if ensemble is None:
        if N is None:
            raise ValueError("give either N or a starting ensemble")
        center = np.full(p.k, p.F) if init_center is None else init_center
        ensemble = init_ensemble(N, p.k, center, init_spread, seed)
    if ensemble.size % 3:
        raise ValueError(f"merging filter needs N divisible by 3, got {ensemble.size}")
    e = ensemble
    out = np.empty((obs.shape[0], e.particles.shape[1]))
    ess = np.empty(obs.shape[0])
    spread = np.empty_like(out)
    for i, y in enumerate(obs):
        t = t0 + i + 1
        rng = step_rng(seed, t)
        e = predict_ensemble(e, p, q, rng, dynamics)
        try:
            e = reweight(e, y, s, r)
        except DegenerateLikelihoodError as exc:
            raise DegenerateLikelihoodError(f"degenerate likelihood at step {t}", step=t) from exc
        out[i] = estimate(e)
        ess[i] = e.ess
        spread[i] = np.sqrt(e.weights @ (e.particles - out[i]) ** 2)
        e = merge_refilter(e, coefficients, rng)
    return FilterResult(out, e, ess, spread)


class MergingParticleFilter(TransformerMixin, BaseEstimator):
    """Estimator view of :func:`run_filter`: ``transform(Y)`` returns state estimates.

    ``fit`` only validates the configuration and records dimensions; the
    filter itself has nothing to learn.
    """

    def __init__(self, operator=None, params=None, system_noise=0.05, obs_noise=1.0,
                 n_particles=1026, init_spread=1.0, random_state=0):
        self.operator = operator
        self.params = params
        self.system_noise = system_noise
        self.obs_noise = obs_noise
        self.n_particles = n_particles
        self.init_spread = init_spread
        self.random_state = random_state

    def fit(self, Y=None, y=None):
        from .model import Lorenz96Params, NoiseSpec

        if self.operator is None:
            raise ValueError("operator is required")
        self.params_ = self.params or Lorenz96Params(k=self.operator.n_state)
        self.q_ = NoiseSpec(self.system_noise, self.params_.k)
        self.r_ = NoiseSpec(self.obs_noise, self.operator.n_obs)
        check_positive_int(self.n_particles, "n_particles", minimum=3)
        if self.n_particles % 3:
            raise ValueError("n_particles must be divisible by 3")
        self.n_features_in_ = self.operator.n_obs
        return self

    def transform(self, Y):
        check_is_fitted(self, "params_")
        res = run_filter(Y, self.operator, self.params_, self.q_, self.r_, N=self.n_particles,
                         seed=self.random_state, init_spread=self.init_spread)
        self.ensemble_ = res.ensemble
        return res.estimates
