"""Spectral reweighting estimators: Filtering and No-regret."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from ..core import RngState, as_sample_matrix, stream_id
from ..spectral import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    WeightedEmpirical,
    dense_top_eigenpair,
    quasi_gradient,
    top_eigenpair,
)
from .classical import EstimatorError

PREFILTER_C0 = 4.0
# up to this dimension the covariance is formed and diagonalised exactly;
# power iteration stalls on the near-flat spectrum left once outliers are gone
DENSE_EIG_MAX_D = 512


class WeightCollapseError(EstimatorError):
    """Reweighting removed every sample; the threshold is below the attainable variance."""


@dataclass(frozen=True)
class FilterResult:
    """Output of a reweighting estimator.

    ``weights`` has one entry per input row; rows dropped by pre-filtering or
    filtering carry zero weight.
    """

    mean: np.ndarray
    weights: np.ndarray
    iterations: int
    converged: bool
    spectral_norm: float


def kl_project_capped_simplex(q_tilde, cap: float) -> np.ndarray:
    """KL projection of a non-negative vector onto ``{sum q = 1, q_i <= cap}``.

    The minimiser has the form ``q_i = min(cap, gamma * q_tilde_i)`` with
    ``gamma`` fixed by the sum constraint; entries are capped greedily from the
    largest down.
    """
    q_tilde = np.asarray(q_tilde, dtype=float)
    if q_tilde.ndim != 1 or np.any(q_tilde < 0) or not np.all(np.isfinite(q_tilde)):
        raise ValueError("q_tilde must be a finite non-negative vector")
    total = q_tilde.sum()
    if total <= 0:
        raise ValueError("q_tilde has no mass")
    support = int(np.count_nonzero(q_tilde))
    if cap * q_tilde.size < 1.0 - 1e-12 or cap * support < 1.0 - 1e-12:
        raise ValueError(f"cap {cap} is infeasible for {support} supported entries")
    order = np.argsort(-q_tilde, kind="stable")
    sorted_q = q_tilde[order]
    tail = np.cumsum(sorted_q[::-1])[::-1]  # tail[j] = sum of sorted_q[j:]
    out = np.empty_like(q_tilde)
    for j in range(support):
        # gamma * q written as a share of the tail, so tiny entries cannot overflow gamma
        rest = 1.0 - j * cap
        if rest * (sorted_q[j] / tail[j]) <= cap * (1.0 + 1e-12):
            capped = order[:j]
            out[capped] = cap
            free = order[j:]
            out[free] = np.minimum(rest * (q_tilde[free] / tail[j]), cap)
            return out
    # every supported entry capped: cap * support == 1
    out[:] = 0.0
    out[order[:support]] = cap
    return out


def _spectrum(samples, weights, tol, max_iter, rng):
    we = WeightedEmpirical(samples, weights / weights.sum())
    if we.shape[1] <= DENSE_EIG_MAX_D:
        return we, dense_top_eigenpair(we)
    eig = top_eigenpair(we, tol=tol, max_iter=max_iter, rng=rng)
    if not eig.converged:
        warnings.warn("power iteration did not converge", ConvergenceWarning, stacklevel=3)
    return we, eig


def filtering(
    updates,
    xi: float,
    q0=None,
    max_iter: int | None = None,
    eig_tol: float = DEFAULT_TOL,
    eig_max_iter: int = DEFAULT_MAX_ITER,
    rng: RngState | None = None,
) -> FilterResult:
    """Downweight samples along the top covariance direction until ``||Cov_q|| <= xi``.

    Each step multiplies ``q_i`` by ``1 - g_i / max_j g_j`` and renormalises, so
    the sample with the largest quasi-gradient drops out every round and the
    loop ends after at most ``m`` steps.
    """
    x = as_sample_matrix(updates)
    m, d = x.shape
    if xi < 0:
        raise ValueError("xi must be non-negative")
    q = np.full(m, 1.0 / m) if q0 is None else np.asarray(q0, dtype=float).copy()
    if rng is None:
        rng = RngState(0, stream_id("filtering", m, d))
    limit = m if max_iter is None else max_iter
    active = np.flatnonzero(q > 0)
    all_converged = True
    for it in range(limit + 1):
        we, eig = _spectrum(x[active], q[active], eig_tol, eig_max_iter, rng.derive(it))
        all_converged &= eig.converged
        if eig.value <= xi:
            weights = np.zeros(m)
            weights[active] = we.weights
            return FilterResult(we.mean, weights, it, all_converged, eig.value)
        if it == limit:
            break
        g = quasi_gradient(we, eig.vector)
        q_new = we.weights * (1.0 - g / g.max())
        q_new[g == g.max()] = 0.0
        np.maximum(q_new, 0.0, out=q_new)
        if q_new.sum() <= 0:
            raise WeightCollapseError("filtering destroyed all weight; xi is below the attainable variance")
        q[:] = 0.0
        q[active] = q_new / q_new.sum()
        active = np.flatnonzero(q > 0)
    weights = np.zeros(m)
    weights[active] = we.weights
    return FilterResult(we.mean, weights, limit, False, eig.value)


def prefilter(updates, epsilon: float, c0: float = PREFILTER_C0) -> np.ndarray:
    """Indices surviving the naive distance filter.

    A row is dropped when more than ``2 eps m`` other rows lie farther than
    ``c0 * sigma_est * sqrt(d log m)``, where ``sigma_est`` is the median
    pairwise distance divided by ``sqrt(2 d)``.
    """
    x = as_sample_matrix(updates)
    m, d = x.shape
    if m < 3:
        return np.arange(m)
    diff_sq = np.einsum("ij,ij->i", x, x)
    dist = np.sqrt(np.maximum(diff_sq[:, None] + diff_sq[None, :] - 2.0 * x @ x.T, 0.0))
    off = dist[np.triu_indices(m, 1)]
    sigma_est = float(np.median(off)) / math.sqrt(2.0 * d)
    cutoff = c0 * sigma_est * math.sqrt(d * math.log(m))
    far = (dist > cutoff).sum(axis=1)
    keep = np.flatnonzero(far <= 2.0 * epsilon * m)
    if keep.size == 0:
        raise EstimatorError("no-regret pre-filter removed every sample")
    return keep


def no_regret(
    updates,
    epsilon: float,
    sigma2: float,
    xi: float,
    eta: float = 0.5,
    max_iter: int = 200,
    eig_tol: float = DEFAULT_TOL,
    eig_max_iter: int = DEFAULT_MAX_ITER,
    prefilter_c0: float = PREFILTER_C0,
    rng: RngState | None = None,
) -> FilterResult:
    """Multiplicative-weights reweighting with KL projection onto the capped simplex.

    The step ``q_i <- q_i (1 - eta eps g_i / (2 sigma2 d))`` is clamped at zero
    for samples whose quasi-gradient would make the factor negative.
    """
    x = as_sample_matrix(updates)
    m, d = x.shape
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if rng is None:
        rng = RngState(0, stream_id("no-regret", m, d))
    keep = prefilter(x, epsilon, prefilter_c0)
    sub = x[keep]
    mp = sub.shape[0]
    cap = 1.0 / ((1.0 - epsilon) * mp)
    step = eta * epsilon / (2.0 * sigma2 * d)
    q = np.full(mp, 1.0 / mp)
    best = None
    all_converged = True
    for it in range(max_iter + 1):
        we, eig = _spectrum(sub, q, eig_tol, eig_max_iter, rng.derive(it))
        all_converged &= eig.converged
        if best is None or eig.value < best[0]:
            best = (eig.value, we.mean, we.weights, it)
        if eig.value <= xi:
            return FilterResult(we.mean, _expand(m, keep, we.weights), it, all_converged, eig.value)
        if it == max_iter:
            break
        g = quasi_gradient(we, eig.vector)
        q_tilde = we.weights * np.maximum(1.0 - step * g, 0.0)
        if np.count_nonzero(q_tilde) * cap < 1.0:
            # the clamp zeroed too much mass for the cap; keep the surviving ranking
            q_tilde = we.weights * np.exp(-step * (g - g.min()))
        q = kl_project_capped_simplex(q_tilde, cap)
    value, mu, weights, it = best
    return FilterResult(mu, _expand(m, keep, weights), max_iter, False, value)


def _expand(m, keep, weights):
    out = np.zeros(m)
    out[keep] = weights
    return out
