"""Sub-interval training loop, baseline run, improvement rate and file I/O."""
import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix
from .assimilate import MergeCoefficients, estimate, init_ensemble, run_filter
from .exceptions import PipelineError, SurrogateDAError  # noqa: F401  (re-exported for the CLI)
from .model import Lorenz96Params, NoiseSpec
from .neural import MLPCorrection, save_network
from .observe import generate_twin_data, make_banded_operator
from .surrogate import SurrogateOperator, build_dataset

logger = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; field names match the JSON keys."""

    # model
    k: int = 8
    F: float = 8.0
    dt: float = 0.05
    # true operator (data generation only) and initial surrogate
    true_c1: float = 1.0
    true_c2: float = 0.5
    circulant: bool = False
    base_c1: float = 1.0
    base_c2: float = 0.0
    # noise: truth system noise, observation noise, filter process noise
    sigma_q: float = 0.05
    sigma_r: float = 1.0
    filter_sigma_q: float = 0.3
    # filter
    n_particles: int = 1026
    init_spread: float = 3.0
    merge_a1: float = 0.75
    # correction network and optimizer
    hidden: list = field(default_factory=lambda: [80, 80, 80, 80])
    learning_rate: float = 1e-5
    batch_size: int = 64
    epochs: int = 200
    standardize: bool = True
    warm_start: bool = False
    # schedule (observation-step indices)
    boundaries: list = field(default_factory=lambda: [3000, 6000, 7000])
    inner_updates: object = 2
    train_last: bool = False
    # run
    seed: int = 0
    replicates: int = 10
    output_dir: str = "output"

    def __post_init__(self):
        b = list(self.boundaries)
        if not b or b[0] < 1 or any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly increasing positive integers, got {b}")
        if self.n_particles % 3:
            raise ValueError("n_particles must be divisible by 3")
        J = self.inner_updates_per_interval()
        if any(j < 1 for j in J):
            raise ValueError("inner_updates must be >= 1")
        self.model_params()
        self.base_operator()
        MergeCoefficients.from_first(self.merge_a1)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return dataclasses.asdict(self)

    @property
    def T(self):
        return self.boundaries[-1]

    @property
    def n_intervals(self):
        return len(self.boundaries)

    def inner_updates_per_interval(self):
        J = self.inner_updates
        if isinstance(J, (list, tuple)):
            if len(J) != self.n_intervals:
                raise ValueError("inner_updates list must have one entry per sub-interval")
            return [int(j) for j in J]
        return [int(J)] * self.n_intervals

    def trained_updates(self):
        """Number of training passes per sub-interval (0 = evaluation only)."""
        J = self.inner_updates_per_interval()
        if not self.train_last:
            J[-1] = 0
        return J

    def intervals(self):
        edges = [0, *self.boundaries]
        return list(zip(edges[:-1], edges[1:]))

    def model_params(self):
        return Lorenz96Params(k=self.k, F=self.F, dt=self.dt)

    def true_operator(self):
        return make_banded_operator(self.k, self.true_c1, self.true_c2, circulant=self.circulant)

    def base_operator(self):
        return make_banded_operator(self.k, self.base_c1, self.base_c2, circulant=self.circulant)

    def seeds(self):
        """(data, filter, network) seeds derived from the master seed."""
        data, filt, net = np.random.SeedSequence(self.seed).generate_state(3)
        return int(data), int(filt), int(net)


def generate(cfg):
    """Truth and observations for ``cfg``; the only use of the true operator."""
    p = cfg.model_params()
    H = cfg.true_operator()
    data_seed = cfg.seeds()[0]
    return generate_twin_data(p, H, NoiseSpec(cfg.sigma_q, cfg.k), NoiseSpec(cfg.sigma_r, H.n_obs),
                              cfg.T, data_seed)


def _filter_setup(cfg):
    base = cfg.base_operator()
    return dict(
        p=cfg.model_params(),
        q=NoiseSpec(cfg.filter_sigma_q, cfg.k),
        r=NoiseSpec(cfg.sigma_r, base.n_obs),
        coefficients=MergeCoefficients.from_first(cfg.merge_a1),
    )


def _initial_ensemble(cfg):
    return init_ensemble(cfg.n_particles, cfg.k, np.full(cfg.k, cfg.F), cfg.init_spread,
                         cfg.seeds()[1])


def run_baseline(cfg, obs):
    """Filter all observations with the fixed initial surrogate."""
    obs = _check_obs(cfg, obs)
    setup = _filter_setup(cfg)
    res = run_filter(obs, SurrogateOperator(cfg.base_operator()), seed=cfg.seeds()[1],
                     ensemble=_initial_ensemble(cfg), **setup)
    return res.estimates


@dataclass
class PassLog:
    m: int
    j: int
    n_pairs: int
    cost_before: float
    cost_after: float


@dataclass
class Algorithm1Result:
    surrogates: dict
    estimates: np.ndarray
    passes: list

    def final_surrogate(self):
        return self.surrogates[max(self.surrogates)]


def run_algorithm1(cfg, obs, checkpoint_dir=None):
    """Alternate filtering and correction training over the sub-interval schedule.

    In sub-interval ``m`` every inner pass ``j`` restarts from the ensemble
    left by the previous sub-interval, filters with operator ``(m, j-1)``,
    builds the dataset against the fixed base and retrains the network
    (from scratch unless ``cfg.warm_start``). Untrained sub-intervals are filtered
    once with the operator carried into them.

    Returns
    -------
    Algorithm1Result
        ``surrogates[(m, j)]`` for every operator produced (``(m, 0)`` is
        the one entering sub-interval ``m``), the estimates from the last
        filter pass of each sub-interval and per-pass training logs.
    """
    obs = _check_obs(cfg, obs)
    base = cfg.base_operator()
    p = cfg.model_params()
    setup = _filter_setup(cfg)
    filter_seed, net_seed = cfg.seeds()[1:]
    reg = MLPCorrection(hidden_layer_sizes=tuple(cfg.hidden), learning_rate=cfg.learning_rate,
                        batch_size=cfg.batch_size, epochs=cfg.epochs, standardize=cfg.standardize,
                        random_state=net_seed, warm_start=cfg.warm_start)

    ensemble = _initial_ensemble(cfg)
    prev_estimate = estimate(ensemble)
    current = SurrogateOperator(base, None, (1, 0))
    surrogates, passes = {}, []
    estimates = np.empty((cfg.T, cfg.k))

    for m, ((start, stop), J) in enumerate(zip(cfg.intervals(), cfg.trained_updates()), start=1):
        current = dataclasses.replace(current, lineage=(m, 0))
        surrogates[(m, 0)] = current
        for j in range(1, max(J, 1) + 1):
            try:
                res = run_filter(obs[start:stop], current, seed=filter_seed, ensemble=ensemble,
                                 t0=start, **setup)
                if J == 0:
                    break
                if current.lineage != (m, j - 1):
                    raise PipelineError(f"operator {current.lineage} cannot feed pass {(m, j)}")
                prevs = np.vstack([prev_estimate, res.estimates[:-1]])
                data = build_dataset(obs[start:stop], prevs, base, p, lineage=(m, j - 1))
                reg.fit(data.inputs, data.targets)
            except PipelineError:
                raise
            except (SurrogateDAError, ValueError, ArithmeticError) as exc:
                raise PipelineError(f"sub-interval {m}, pass {j}: {exc}", m=m, j=j) from exc
            passes.append(PassLog(m, j, len(data), reg.initial_cost_, reg.train_cost_))
            logger.info("m=%d j=%d pairs=%d cost %.6g -> %.6g", m, j, len(data),
                        reg.initial_cost_, reg.train_cost_)
            current = SurrogateOperator(base, reg.network_, (m, j))
            surrogates[(m, j)] = current
            if checkpoint_dir is not None:
                save_network(reg.network_, Path(checkpoint_dir) / f"nn_m{m}_j{j}.sdann")
        estimates[start:stop] = res.estimates
        ensemble = res.ensemble
        prev_estimate = res.estimates[-1]
    return Algorithm1Result(surrogates, estimates, passes)


def _check_obs(cfg, obs):
    obs = as_matrix(obs, name="obs")
    if obs.shape[0] != cfg.T:
        raise ValueError(f"expected {cfg.T} observations, got {obs.shape[0]}")
    return obs


@dataclass
class EvaluationReport:
    gamma: np.ndarray
    n_a: np.ndarray
    n_b: np.ndarray
    ties: np.ndarray
    rmse_baseline: float
    rmse_method: float
    window: tuple

    @property
    def all_tie(self):
        return (self.n_a + self.n_b) == 0


def improvement_rate(truth, est_baseline, est_method, window=None):
    """Per-component rate ``n(B) / (n(A) + n(B))`` over ``window``.

    ``n(B)`` counts steps where the method's absolute error is strictly
    smaller than the baseline's, ``n(A)`` strictly larger. Exact ties count
    toward neither; a component with only ties reports 0.5.
    """
    truth, est_baseline, est_method = (np.asarray(a, dtype=np.float64)
                                       for a in (truth, est_baseline, est_method))
    if not (truth.shape == est_baseline.shape == est_method.shape) or truth.ndim != 2:
        raise ValueError("truth and estimates must be aligned (T, k) arrays")
    if window is None:
        window = (0, truth.shape[0])
    lo, hi = window
    if not 0 <= lo < hi <= truth.shape[0]:
        raise ValueError(f"empty or out-of-range window {window}")
    eb = np.abs(est_baseline[lo:hi] - truth[lo:hi])
    em = np.abs(est_method[lo:hi] - truth[lo:hi])
    n_b = np.sum(em < eb, axis=0)
    n_a = np.sum(em > eb, axis=0)
    ties = (hi - lo) - n_a - n_b
    denom = n_a + n_b
    gamma = np.where(denom > 0, n_b / np.maximum(denom, 1), 0.5)
    return EvaluationReport(gamma, n_a, n_b, ties,
                            float(np.sqrt(np.mean(eb ** 2))), float(np.sqrt(np.mean(em ** 2))),
                            (lo, hi))


def evaluation_window(cfg):
    """Final sub-interval, as 0-based ``[start, stop)`` row indices."""
    return cfg.intervals()[-1]


# -- CSV files --------------------------------------------------------------

def _fmt(v):
    return format(float(v), ".17g")


def write_series(path, data, prefix, first_step=1):
    data = np.asarray(data)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"{prefix}{i + 1}" for i in range(data.shape[1])])
        for t, row in enumerate(data, start=first_step):
            w.writerow([t] + [_fmt(v) for v in row])


def read_series(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)


def write_errors(path, truth, est_baseline, est_method, window):
    lo, hi = window
    eb = np.abs(est_baseline[lo:hi] - truth[lo:hi])
    em = np.abs(est_method[lo:hi] - truth[lo:hi])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "component", "abs_err_baseline", "abs_err_method"])
        for t in range(hi - lo):
            for i in range(eb.shape[1]):
                w.writerow([lo + t + 1, i + 1, _fmt(eb[t, i]), _fmt(em[t, i])])


def write_gamma(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "n_A", "n_B", "ties", "gamma"])
        for i, g in enumerate(report.gamma):
            w.writerow([i + 1, int(report.n_a[i]), int(report.n_b[i]), int(report.ties[i]), _fmt(g)])


def read_gamma(path):
    with open(path, newline="") as fh:
        return np.array([float(r["gamma"]) for r in csv.DictReader(fh)])


# -- pipeline stages ----------------------------------------------------------

def stage_generate(cfg, out):
    truth, obs = generate(cfg)
    write_series(out / "truth.csv", truth, "x")
    write_series(out / "obs.csv", obs, "y")
    return truth, obs


def stage_baseline(cfg, out):
    est = run_baseline(cfg, read_series(out / "obs.csv"))
    write_series(out / "estimates_baseline.csv", est, "x")
    return est


def stage_run(cfg, out):
    res = run_algorithm1(cfg, read_series(out / "obs.csv"), checkpoint_dir=out)
    write_series(out / "estimates_method.csv", res.estimates, "x")
    return res


def stage_evaluate(cfg, out):
    truth = read_series(out / "truth.csv")
    base = read_series(out / "estimates_baseline.csv")
    meth = read_series(out / "estimates_method.csv")
    window = evaluation_window(cfg)
    report = improvement_rate(truth, base, meth, window)
    write_errors(out / "errors.csv", truth, base, meth, window)
    write_gamma(out / "gamma.csv", report)
    return report


def run_all(cfg, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stage_generate(cfg, out)
    stage_baseline(cfg, out)
    stage_run(cfg, out)
    return stage_evaluate(cfg, out)


def run_replicates(cfg, out, n=None, first_seed=None):
    """Run the full pipeline for consecutive seeds and average the rates.

    Each seed writes into ``out/seed_<s>``; ``out/table.csv`` holds the mean
    rate per component.
    """
    out = Path(out)
    n = cfg.replicates if n is None else n
    first_seed = cfg.seed if first_seed is None else first_seed
    reports = []
    for s in range(first_seed, first_seed + n):
        sub = dataclasses.replace(cfg, seed=s)
        reports.append(run_all(sub, out / f"seed_{s}"))
        logger.info("seed %d: gamma %s", s, np.round(reports[-1].gamma, 3))
    mean = np.mean([r.gamma for r in reports], axis=0)
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "mean_gamma_percent"])
        for i, g in enumerate(mean):
            w.writerow([i + 1, f"{100 * g:.1f}"])
    return reports


class SurrogateComposer(TransformerMixin, BaseEstimator):
    """Estimator interface to the sub-interval training loop.

    ``fit(Y)`` learns the composed surrogate operator from an observation
    sequence ``Y`` of shape ``(T, l)``; ``transform(Y)`` filters ``Y`` with
    the learned operator and returns state estimates. Keyword parameters are
    the :class:`ExperimentConfig` fields that matter for estimation; the
    schedule defaults to a single sub-interval spanning ``Y``.
    """

    def __init__(self, base_c1=1.0, base_c2=0.0, boundaries=None, inner_updates=2,
                 sigma_r=1.0, filter_sigma_q=0.3, n_particles=1026, init_spread=3.0,
                 hidden=(80, 80, 80, 80), learning_rate=1e-5, batch_size=64, epochs=200,
                 F=8.0, dt=0.05, random_state=0):
        self.base_c1 = base_c1
        self.base_c2 = base_c2
        self.boundaries = boundaries
        self.inner_updates = inner_updates
        self.sigma_r = sigma_r
        self.filter_sigma_q = filter_sigma_q
        self.n_particles = n_particles
        self.init_spread = init_spread
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.F = F
        self.dt = dt
        self.random_state = random_state

    def _config(self, Y):
        boundaries = list(self.boundaries) if self.boundaries else [Y.shape[0]]
        return ExperimentConfig(
            k=Y.shape[1], F=self.F, dt=self.dt, base_c1=self.base_c1, base_c2=self.base_c2,
            sigma_r=self.sigma_r, filter_sigma_q=self.filter_sigma_q,
            n_particles=self.n_particles, init_spread=self.init_spread, hidden=list(self.hidden),
            learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
            boundaries=boundaries, inner_updates=self.inner_updates, train_last=True,
            seed=self.random_state)

    def fit(self, Y, y=None):
        Y = as_matrix(Y, name="Y")
        self.config_ = self._config(Y)
        result = run_algorithm1(self.config_, Y)
        self.surrogates_ = result.surrogates
        self.surrogate_ = result.final_surrogate()
        self.passes_ = result.passes
        self.n_features_in_ = Y.shape[1]
        return self

    def transform(self, Y):
        check_is_fitted(self, "surrogate_")
        Y = as_matrix(Y, n_cols=self.n_features_in_, name="Y")
        setup = _filter_setup(self.config_)
        return run_filter(Y, self.surrogate_, N=self.config_.n_particles,
                          seed=self.config_.seeds()[1], init_spread=self.init_spread,
                          **setup).estimates
