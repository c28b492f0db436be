"""Weighted second-moment queries without forming d x d matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RngState, as_sample_matrix, stream_id

WEIGHT_SUM_TOL = 1e-9
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200


class WeightedEmpirical:
    """Samples ``x_1..x_m`` with a probability vector ``q`` over them."""

    def __init__(self, samples, weights=None):
        self.samples = as_sample_matrix(samples)
        m = self.samples.shape[0]
        if weights is None:
            weights = np.full(m, 1.0 / m)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (m,):
            raise ValueError(f"weights must have shape ({m},), got {weights.shape}")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        self.weights = weights
        self.mean = weights @ self.samples
        self.centered = self.samples - self.mean

    @property
    def shape(self):
        return self.samples.shape

    def cov_matvec(self, v: np.ndarray) -> np.ndarray:
        """``Cov_q v`` in O(md)."""
        return self.centered.T @ (self.weights * (self.centered @ v))

    def cov_diagonal(self) -> np.ndarray:
        return self.weights @ (self.centered**2)


@dataclass(frozen=True)
class EigenResult:
    value: float
    vector: np.ndarray
    iterations: int
    converged: bool


def weighted_mean(we: WeightedEmpirical) -> np.ndarray:
    return we.mean.copy()


def _power_iterate(we, v, tol, max_iter):
    value = 0.0
    for it in range(1, max_iter + 1):
        w = we.cov_matvec(v)
        value = float(v @ w)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0, v, it, True
        residual = float(np.linalg.norm(w - value * v))
        v = w / norm
        if residual <= tol * value:
            # one more Rayleigh quotient on the updated vector
            value = float(v @ we.cov_matvec(v))
            return value, v, it, True
    return float(v @ we.cov_matvec(v)), v, max_iter, False


def top_eigenpair(
    we: WeightedEmpirical,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    rng: RngState | None = None,
) -> EigenResult:
    """Top eigenpair of ``Cov_q`` by power iteration.

    Convergence means the residual ``||Cov v - lambda v||`` dropped below
    ``tol * lambda``. On non-convergence the last iterate is returned with
    ``converged=False``.
    """
    m, d = we.shape
    if rng is None:
        rng = RngState(0, stream_id("power-iteration", m, d))
    v0 = rng.unit_vector(d)
    value, v, iters, converged = _power_iterate(we, v0, tol, max_iter)
    diag_max = float(we.cov_diagonal().max())
    if diag_max > 0 and value < tol * diag_max:
        # start vector was (numerically) orthogonal to the top space
        v1 = rng.derive("restart").unit_vector(d)
        value, v, more, converged = _power_iterate(we, v1, tol, max_iter)
        iters += more
    return EigenResult(max(value, 0.0), v / np.linalg.norm(v), iters, converged)


def dense_top_eigenpair(we: WeightedEmpirical) -> EigenResult:
    """Exact top eigenpair from the explicit ``d x d`` covariance (LAPACK ``syevd``)."""
    c = we.centered
    cov = c.T @ (we.weights[:, None] * c)
    values, vectors = np.linalg.eigh(cov)
    return EigenResult(max(float(values[-1]), 0.0), vectors[:, -1].copy(), 1, True)


def quasi_gradient(we: WeightedEmpirical, v) -> np.ndarray:
    """Squared projections ``(v.(x_i - mu_q))^2`` of the centred samples."""
    v = np.asarray(v, dtype=float)
    if v.shape != (we.shape[1],):
        raise ValueError("direction dimension does not match samples")
    return (we.centered @ v) ** 2


def split_intervals(d: int, interval_size: int | None) -> list[range]:
    """Contiguous coordinate blocks of length ``interval_size`` (last may be short)."""
    if d < 1:
        raise ValueError("d must be at least 1")
    if interval_size is None:
        return [range(0, d)]
    if interval_size < 1:
        raise ValueError("interval_size must be at least 1")
    return [range(start, min(start + interval_size, d)) for start in range(0, d, interval_size)]
