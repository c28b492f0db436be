"""Round-based federated training with Byzantine clients and bucketed robust aggregation."""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from . import attacks as atk
from .core import (
    MEAN_ESTIMATION,
    ParamSpace,
    RngState,
    TaskSpec,
    project,
    sample_client_data,
)
from .estimators.bucketing import bucket_means, bucketize
from .estimators.classical import EstimatorError
from .estimators.thresholds import ThresholdError
from .estimators.config import (
    AggregationResult,
    EstimatorConfig,
    aggregate_means,
    aggregate_with_info,
    bucket_count,
)
from .secure_agg import DEFAULT_LEVELS, DEFAULT_MODULUS, SecureAggConfig, adaptive_clip, secure_bucket_means

SCHEDULES = ("auto", "constant", "decaying")
SWEEP_AXES = ("d", "epsilon", "m", "n")


@dataclass(frozen=True)
class ExperimentConfig:
    m: int = 100
    n: int = 20
    d: int = 32
    epsilon: float = 0.0
    H: int = 1
    k: int | None = None
    T: int = 100
    delta: float = 0.1
    schedule: str = "auto"
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    # None: the estimator is told the true corruption fraction
    estimator_epsilon: float | None = None
    attack: atk.AttackSpec = field(default_factory=atk.AttackSpec)
    secure: bool = False
    secure_clip: float | None = None
    secure_levels: int = DEFAULT_LEVELS
    secure_modulus: int = DEFAULT_MODULUS
    stochastic_rounding: bool = False
    task: str = MEAN_ESTIMATION
    sigma: float = 1.0
    sigma_h: float | None = None
    radius: float | None = None
    seed: int = 0
    record_timing: bool = False

    def __post_init__(self):
        for name in ("m", "n", "d", "H"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.k is not None and not 1 <= self.k <= self.m:
            raise ValueError(f"k must lie in [1, m], got {self.k}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def n_malicious(self) -> int:
        return atk.malicious_count(self.epsilon, self.m)

    def estimator_config(self) -> EstimatorConfig:
        eps = self.epsilon if self.estimator_epsilon is None else self.estimator_epsilon
        return replace(self.estimator, epsilon=eps, delta=self.delta)

    def bucket_count(self) -> int:
        if self.k is not None:
            return self.k
        est = self.estimator_config()
        return bucket_count(est, self.m) if est.kind == "bucketing" else self.m


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    param_err: float
    agg_err: float
    loss: float
    grad_norm: float
    converged: bool
    elapsed_ms: float = 0.0
    # distance of the aggregate from the noiseless step -eta * grad F(w); not part of the CSV
    pop_agg_err: float = 0.0


@dataclass
class SimState:
    w: np.ndarray
    task: TaskSpec
    data: np.ndarray  # (m, n, cols)
    space: ParamSpace
    malicious: np.ndarray
    rng: RngState
    t: int = 0
    steps: int = 0


@dataclass
class RoundTrace:
    """Intermediate values of one round, kept for inspection in tests."""

    honest_updates: np.ndarray
    uploads: np.ndarray
    buckets: list
    estimator_input: np.ndarray
    transcripts: list | None
    g_hat: np.ndarray


def init_state(cfg: ExperimentConfig) -> SimState:
    rng = RngState(cfg.seed)
    w_star = rng.derive("w-star").normal(cfg.d)
    task = TaskSpec(cfg.task, w_star, cfg.sigma)
    w0 = np.zeros(cfg.d)
    radius = cfg.radius
    if radius is None:
        radius = 10.0 * max(float(np.linalg.norm(w0 - w_star)), 1e-12)
    data = np.stack([sample_client_data(task, cfg.n, rng.derive("client", i)) for i in range(cfg.m)])
    malicious = atk.choose_malicious(cfg.m, cfg.epsilon, rng.derive("malicious"))
    return SimState(w0, task, data, ParamSpace(radius), malicious, rng)


def step_sizes(cfg: ExperimentConfig, task: TaskSpec, start: int, count: int) -> np.ndarray:
    """Step sizes for global steps ``start .. start+count-1``."""
    L, lam = task.smoothness, task.strong_convexity
    schedule = cfg.schedule
    if schedule == "auto":
        schedule = "decaying" if cfg.H >= 2 else "constant"
    if schedule == "constant":
        return np.full(count, 1.0 / L)
    a = (L + lam) / lam
    s = np.arange(start, start + count, dtype=float)
    return a / (L * (s + a))


def local_updates(task: TaskSpec, w, data, etas) -> np.ndarray:
    """``w_i^{after H steps} - w`` for every client in ``data`` (shape ``(m, n, cols)``)."""
    data = np.asarray(data, dtype=float)
    m = data.shape[0]
    local = np.tile(np.asarray(w, dtype=float), (m, 1))
    if task.kind == MEAN_ESTIMATION:
        centers = data.mean(axis=1)
        for eta in etas:
            local = local - eta * 2.0 * (local - centers)
    else:
        x, y = data[:, :, :-1], data[:, :, -1]
        n = data.shape[1]
        for eta in etas:
            residual = np.einsum("mnd,md->mn", x, local) - y
            local = local - eta * np.einsum("mnd,mn->md", x, residual) / n
    return local - w


def flip_labels(task: TaskSpec, data, prob: float, rng: RngState) -> np.ndarray:
    """Label noise: negate regression targets, or reflect mean-estimation samples, with probability ``prob``."""
    data = np.array(data, dtype=float)
    hit = rng.uniform(data.shape[0]) < prob
    if task.kind == MEAN_ESTIMATION:
        data[hit] = -data[hit]
    else:
        data[hit, -1] = -data[hit, -1]
    return data


def update_sigma(cfg: ExperimentConfig, task: TaskSpec) -> float:
    """Per-direction noise scale of one client's H-step update, before the ``eta_t / sqrt(n)`` factor."""
    if cfg.sigma_h is not None:
        return cfg.sigma_h
    return cfg.H * task.gradient_sigma


def _secure_config(cfg: ExperimentConfig, sigma_g: float, eta_t: float) -> SecureAggConfig:
    clip = cfg.secure_clip
    if clip is None:
        clip = adaptive_clip(sigma_g, eta_t, cfg.d)
    return SecureAggConfig(cfg.secure_modulus, clip, cfg.secure_levels, cfg.stochastic_rounding)


def _aggregate(cfg, est, rows, k, rng) -> AggregationResult:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if est.kind == "bucketing":
            if est.epsilon == 0:
                return AggregationResult(rows.mean(axis=0))
            return aggregate_means(est, rows, k, cfg.m, rng)
        if k < cfg.m:
            # rows are bucket means: noise shrinks by m / k
            est = replace(est, n=est.n * cfg.m // k)
        return aggregate_with_info(est, rows, rng)


def run_round(state: SimState, cfg: ExperimentConfig, trace: bool = False):
    """Advance one round; returns ``(state, record)`` or ``(state, record, RoundTrace)``."""
    started = time.perf_counter()
    t = state.t + 1
    task = state.task
    rng = state.rng.derive("round", t)
    etas = step_sizes(cfg, task, state.steps, cfg.H)
    eta_t = float(etas[0])
    sigma_g = update_sigma(cfg, task)

    honest = local_updates(task, state.w, state.data, etas)
    malicious = state.malicious
    if cfg.attack.per_round:
        malicious = atk.choose_malicious(cfg.m, cfg.epsilon, state.rng.derive("malicious", t))
    spec = replace(cfg.attack, epsilon=cfg.epsilon, malicious_ids=tuple(malicious))
    ctx = atk.RoundContext(
        global_w=state.w,
        rng=rng.derive("attack"),
        run_rng=state.rng,
        n=cfg.n,
        sigma=task.sigma,
        data_gain=1.0 - float(np.prod(1.0 - etas * task.strong_convexity)),
        malicious_data={int(i): state.data[int(i)] for i in malicious},
        compute_update=lambda data: local_updates(task, state.w, data[None], etas)[0],
        flip_labels=lambda data, p, r: flip_labels(task, data, p, r),
    )
    uploads = atk.apply_attack(spec, honest, ctx)

    k = cfg.bucket_count()
    buckets = bucketize(cfg.m, k, rng.derive("buckets"))
    transcripts = None
    if cfg.secure:
        sa = _secure_config(cfg, sigma_g, eta_t)
        rows, transcripts = secure_bucket_means(sa, uploads, buckets, rng.derive("secure"))
    else:
        rows = bucket_means(uploads, buckets)

    est = replace(cfg.estimator_config(), sigma=sigma_g, n=cfg.n, eta_t=eta_t)
    try:
        res = _aggregate(cfg, est, rows, k, rng.derive("estimator"))
        g_hat, converged = res.value, res.converged
        if not np.all(np.isfinite(g_hat)):
            raise FloatingPointError("estimator returned non-finite values")
    except (EstimatorError, ThresholdError, FloatingPointError, np.linalg.LinAlgError):
        g_hat, converged = np.zeros(cfg.d), False

    w_new = project(state.space, state.w + g_hat)
    honest_mask = np.ones(cfg.m, dtype=bool)
    honest_mask[malicious] = False
    honest_mean = honest[honest_mask].mean(axis=0)
    elapsed = (time.perf_counter() - started) * 1e3 if cfg.record_timing else 0.0
    record = MetricsRecord(
        round=t,
        param_err=float(np.linalg.norm(w_new - task.w_star)),
        agg_err=float(np.linalg.norm(g_hat - honest_mean)),
        loss=task.population_loss(w_new),
        grad_norm=float(np.linalg.norm(task.population_gradient(w_new))),
        converged=bool(converged),
        elapsed_ms=elapsed,
        pop_agg_err=float(np.linalg.norm(g_hat + eta_t * task.population_gradient(state.w))),
    )
    new_state = replace(state, w=w_new, t=t, steps=state.steps + cfg.H)
    if trace:
        return new_state, record, RoundTrace(honest, uploads, buckets, rows, transcripts, g_hat)
    return new_state, record


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list
    w_star: np.ndarray
    w0_err: float
    malicious: np.ndarray
    final_w: np.ndarray


def simulate(cfg: ExperimentConfig) -> RunResult:
    state = init_state(cfg)
    w0_err = float(np.linalg.norm(state.w - state.task.w_star))
    records = []
    for _ in range(cfg.T):
        state, rec = run_round(state, cfg)
        records.append(rec)
    return RunResult(cfg, records, state.task.w_star, w0_err, state.malicious, state.w)


def run_experiment(cfg: ExperimentConfig) -> list[MetricsRecord]:
    return simulate(cfg).records


def plateau(records) -> float:
    """Median parameter error over the last 10% of rounds (at least one)."""
    if not records:
        raise ValueError("no records")
    tail = max(1, math.ceil(0.1 * len(records)))
    return float(np.median([r.param_err for r in records[-tail:]]))


@dataclass(frozen=True)
class Envelope:
    bounds: np.ndarray
    violations: int
    violating_rounds: tuple


def theorem31_envelope(records, L: float, lam: float, w0_err: float, slack: float = 0.1,
                       step: float | None = None, reference: str = "honest") -> Envelope:
    """Geometric-plus-floor bound on the parameter error, and how often it is exceeded.

    ``agg_err`` is measured on updates, i.e. gradients scaled by the step, so
    it is divided by ``step`` (default ``1/L``) before entering the
    ``2/lambda`` floor. ``reference="population"`` uses ``pop_agg_err``
    instead, which also charges the honest clients' sampling error.
    """
    if reference not in ("honest", "population"):
        raise ValueError(f"unknown reference {reference!r}")
    step = 1.0 / L if step is None else step
    rho = 1.0 - lam / (L + lam)
    bounds = []
    bad = []
    worst = 0.0
    for rec in records:
        err = rec.agg_err if reference == "honest" else rec.pop_agg_err
        worst = max(worst, err / step)
        bound = rho**rec.round * w0_err + 2.0 / lam * worst
        bounds.append(bound)
        if rec.param_err > bound * (1.0 + slack):
            bad.append(rec.round)
    return Envelope(np.asarray(bounds), len(bad), tuple(bad))


@dataclass(frozen=True)
class SweepCell:
    axis: str
    value: float
    plateau: float
    per_seed: tuple


def with_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if axis == "epsilon":
        return replace(cfg, epsilon=float(value))
    return replace(cfg, **{axis: int(value)})


def _plateau_job(cfg):
    return plateau(run_experiment(cfg))


def sweep_configs(base: ExperimentConfig, axis: str, values, seeds: int) -> list[list[ExperimentConfig]]:
    return [[replace(with_axis(base, axis, v), seed=base.seed + s) for s in range(seeds)] for v in values]


def rate_sweep(base: ExperimentConfig, axis: str, values, seeds: int = 10, jobs: int = 1) -> list[SweepCell]:
    """Median-over-seeds plateau for each value of ``axis``."""
    grid = sweep_configs(base, axis, values, seeds)
    flat = [c for row in grid for c in row]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_plateau_job, flat))
    else:
        results = [_plateau_job(c) for c in flat]
    cells = []
    for i, v in enumerate(values):
        chunk = tuple(results[i * seeds : (i + 1) * seeds])
        cells.append(SweepCell(axis, float(v), float(np.median(chunk)), chunk))
    return cells


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])
