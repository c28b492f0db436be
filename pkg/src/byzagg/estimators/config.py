"""Estimator configuration and the ``aggregate`` dispatcher."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from ..core import RngState, as_sample_matrix, stream_id
from ..spectral import DEFAULT_MAX_ITER, DEFAULT_TOL, split_intervals
from . import classical
from .bucketing import bucket_means, bucketize, default_bucket_count
from .classical import EstimatorError
from .filters import PREFILTER_C0, filtering, no_regret
from .thresholds import FILTERING_VARIANTS, NO_REGRET_VARIANTS, compute_threshold

KINDS = (
    "mean",
    "coord-median",
    "coord-trimmed-mean",
    "geometric-median",
    "krum",
    "bulyan",
    "filtering",
    "no-regret",
    "bucketing",
)
DEFAULT_THRESHOLD = {"filtering": "eq2", "no-regret": "eq1"}
BUCKET_THRESHOLD = {"filtering": "eq7", "no-regret": "eq6"}
# no-regret inside buckets runs with fixed eps = eta = 0.1
BUCKET_NO_REGRET = {"epsilon": 0.1, "eta": 0.1}


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs for every aggregation rule.

    ``sigma``, ``n`` and ``eta_t`` describe the honest per-row noise: rows have
    covariance at most ``eta_t^2 sigma^2 / n``. They feed the theory-driven
    thresholds and the No-regret step size.
    """

    kind: str = "mean"
    epsilon: float = 0.0
    eta: float = 0.5
    threshold: str | None = None
    xi: float | None = None
    interval_size: int | None = None
    max_iter: int | None = None
    delta: float = 0.1
    beta: float | None = None
    f: int | None = None
    inner: str | None = None
    k: int | None = None
    bucket_rule: str = "theorem"
    sigma: float = 1.0
    n: int = 1
    eta_t: float = 1.0
    constants: dict = field(default_factory=dict)
    eig_tol: float = DEFAULT_TOL
    eig_max_iter: int = DEFAULT_MAX_ITER
    gm_tol: float = 1e-10
    prefilter_c0: float = PREFILTER_C0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if not 0.0 <= self.epsilon < 0.5 + 1e-12 and self.kind != "mean":
            raise ValueError("epsilon must lie in [0, 1/2)")
        if self.beta is not None and not 0.0 <= self.beta < 0.5:
            raise ValueError("beta must lie in [0, 1/2)")
        if self.xi is not None and self.xi < 0:
            raise ValueError("xi must be non-negative")
        if self.kind == "bucketing" and self.inner_kind not in ("filtering", "no-regret"):
            raise ValueError("bucketing wraps filtering or no-regret only")
        if self.kind == "bulyan" and self.inner_kind not in classical.BULYAN_INNER:
            raise ValueError(f"bulyan inner rule must be one of {classical.BULYAN_INNER}")
        if self.kind in ("filtering", "no-regret", "bucketing"):
            allowed = FILTERING_VARIANTS if self.spectral_kind == "filtering" else NO_REGRET_VARIANTS
            if self.threshold_variant not in allowed:
                raise ValueError(f"threshold {self.threshold_variant!r} does not apply to {self.spectral_kind}")

    @property
    def inner_kind(self) -> str | None:
        if self.inner is not None:
            return self.inner
        if self.kind == "bucketing":
            return "filtering"
        if self.kind == "bulyan":
            return "krum"
        return None

    @property
    def spectral_kind(self) -> str:
        return self.inner_kind if self.kind == "bucketing" else self.kind

    @property
    def threshold_variant(self) -> str:
        if self.xi is not None and self.threshold in (None, "manual"):
            return "manual"
        if self.threshold is not None:
            return self.threshold
        if self.kind == "bucketing":
            return BUCKET_THRESHOLD[self.spectral_kind]
        return DEFAULT_THRESHOLD.get(self.kind, "manual")


@dataclass(frozen=True)
class AggregationResult:
    value: np.ndarray
    converged: bool = True
    iterations: int = 0
    weights: np.ndarray | None = None


def _threshold(cfg: EstimatorConfig, epsilon, eta, d, m, k=None) -> float:
    spec = compute_threshold(
        cfg.threshold_variant,
        epsilon,
        eta=eta,
        sigma=cfg.sigma,
        d=d,
        m=m,
        n=cfg.n,
        delta=cfg.delta,
        eta_t=cfg.eta_t,
        k=k,
        constants=cfg.constants,
        xi=cfg.xi,
    )
    return spec.xi


def _spectral_block(cfg, kind, x, rng, epsilon, eta, rows_for_threshold, k=None, sigma2=None):
    m, d = x.shape
    xi = _threshold(cfg, epsilon, eta, d, rows_for_threshold, k)
    if kind == "filtering":
        res = filtering(
            x, xi, max_iter=cfg.max_iter, eig_tol=cfg.eig_tol, eig_max_iter=cfg.eig_max_iter, rng=rng
        )
    else:
        if sigma2 is None:
            sigma2 = cfg.eta_t**2 * cfg.sigma**2 / cfg.n
        res = no_regret(
            x,
            epsilon,
            sigma2,
            xi,
            eta=eta,
            max_iter=200 if cfg.max_iter is None else cfg.max_iter,
            eig_tol=cfg.eig_tol,
            eig_max_iter=cfg.eig_max_iter,
            prefilter_c0=cfg.prefilter_c0,
            rng=rng,
        )
    return res


def _spectral(cfg, kind, x, rng, epsilon, eta, rows_for_threshold, k=None, sigma2=None):
    """Run a spectral estimator per coordinate interval and concatenate."""
    m, d = x.shape
    out = np.empty(d)
    converged = True
    iterations = 0
    blocks = split_intervals(d, cfg.interval_size)
    weights = None
    for block_no, block in enumerate(blocks):
        res = _spectral_block(
            cfg, kind, x[:, block.start : block.stop], rng.derive("interval", block_no),
            epsilon, eta, rows_for_threshold, k, sigma2,
        )
        out[block.start : block.stop] = res.mean
        converged &= res.converged
        iterations = max(iterations, res.iterations)
        if len(blocks) == 1:
            weights = res.weights
    return AggregationResult(out, converged, iterations, weights)


def bucket_count(cfg: EstimatorConfig, m: int) -> int:
    if cfg.k is not None:
        if not 1 <= cfg.k <= m:
            raise EstimatorError(f"bucket count k={cfg.k} out of range for m={m}")
        return cfg.k
    return default_bucket_count(cfg.epsilon, m, cfg.delta, cfg.bucket_rule)


def aggregate_means(cfg: EstimatorConfig, means, k: int, m: int, rng: RngState) -> AggregationResult:
    """Inner robust step of bucketing, applied to ``k`` bucket means of ``m`` updates."""
    inner = cfg.spectral_kind
    if inner == "no-regret":
        eps = BUCKET_NO_REGRET["epsilon"]
        eta = BUCKET_NO_REGRET["eta"]
        sigma2 = cfg.eta_t**2 * cfg.sigma**2 * k / (m * cfg.n)
    else:
        eps, eta, sigma2 = cfg.epsilon, cfg.eta, None
    return _spectral(cfg, inner, as_sample_matrix(means), rng, eps, eta, m, k=k, sigma2=sigma2)


def bucketed_aggregate(cfg: EstimatorConfig, updates, rng: RngState | None = None) -> np.ndarray:
    return bucketed_aggregate_with_info(cfg, updates, rng).value


def bucketed_aggregate_with_info(cfg, updates, rng=None) -> AggregationResult:
    x = as_sample_matrix(updates)
    m = x.shape[0]
    if rng is None:
        rng = RngState(0, stream_id("bucketing"))
    if cfg.epsilon == 0:
        return AggregationResult(x.mean(axis=0))
    k = bucket_count(cfg, m)
    buckets = bucketize(m, k, rng.derive("buckets"))
    return aggregate_means(cfg, bucket_means(x, buckets), k, m, rng.derive("inner"))


def aggregate_with_info(cfg: EstimatorConfig, updates, rng: RngState | None = None) -> AggregationResult:
    """Apply the configured rule to the rows of ``updates``."""
    x = as_sample_matrix(updates)
    m = x.shape[0]
    kind = cfg.kind
    if rng is None:
        rng = RngState(0, stream_id("aggregate", kind))
    if kind == "mean" or (cfg.epsilon == 0 and cfg.f is None and cfg.beta is None):
        # no corruption budget: every robust rule falls back to the mean
        return AggregationResult(x.mean(axis=0))
    f = cfg.f if cfg.f is not None else int(math.floor(cfg.epsilon * m + 1e-9))
    if kind == "coord-median":
        return AggregationResult(classical.coord_median(x))
    if kind == "coord-trimmed-mean":
        beta = cfg.epsilon if cfg.beta is None else cfg.beta
        return AggregationResult(classical.coord_trimmed_mean(x, beta))
    if kind == "geometric-median":
        y, it, conv = classical.weiszfeld(x, tol=cfg.gm_tol)
        return AggregationResult(y, conv, it)
    if kind == "krum":
        return AggregationResult(classical.krum(x, f))
    if kind == "bulyan":
        return AggregationResult(classical.bulyan(x, f, cfg.inner_kind))
    if m < 2:
        raise EstimatorError(f"{kind} needs at least two rows")
    if kind == "bucketing":
        return bucketed_aggregate_with_info(cfg, x, rng)
    return _spectral(cfg, kind, x, rng, cfg.epsilon, cfg.eta, m)


def aggregate(cfg: EstimatorConfig, updates, rng: RngState | None = None) -> np.ndarray:
    return aggregate_with_info(cfg, updates, rng).value


def quiet_aggregate(cfg: EstimatorConfig, updates, rng: RngState | None = None) -> AggregationResult:
    """``aggregate_with_info`` with power-iteration warnings folded into the flag."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return aggregate_with_info(cfg, updates, rng)


def with_noise(cfg: EstimatorConfig, sigma: float, n: int, eta_t: float) -> EstimatorConfig:
    return replace(cfg, sigma=sigma, n=n, eta_t=eta_t)
