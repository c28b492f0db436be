"""Baseline aggregation rules: means, medians, Krum, Bulyan, geometric median."""

from __future__ import annotations

import math

import numpy as np

from ..core import as_sample_matrix


class EstimatorError(ValueError):
    """An aggregation rule cannot run on the given input."""


def mean(updates) -> np.ndarray:
    return as_sample_matrix(updates).mean(axis=0)


def coord_median(updates) -> np.ndarray:
    return np.median(as_sample_matrix(updates), axis=0)


def coord_trimmed_mean(updates, beta: float) -> np.ndarray:
    """Drop the ``floor(beta m)`` largest and smallest values per coordinate."""
    x = as_sample_matrix(updates)
    if not 0.0 <= beta < 0.5:
        raise EstimatorError("beta must lie in [0, 1/2)")
    m = x.shape[0]
    # guard against 0.2 * 5 = 0.999... style rounding
    b = int(math.floor(beta * m + 1e-9))
    return _trim_rows(x, b)


def _trim_rows(x: np.ndarray, b: int) -> np.ndarray:
    m = x.shape[0]
    if 2 * b >= m:
        raise EstimatorError(f"cannot trim {b} rows from each side of {m}")
    if b == 0:
        return x.mean(axis=0)
    return np.sort(x, axis=0)[b : m - b].mean(axis=0)


def _sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def krum_scores(updates, f: int, neighbors: int | None = None) -> np.ndarray:
    """Sum of squared distances to the ``m - f - 2`` nearest other rows."""
    x = as_sample_matrix(updates)
    m = x.shape[0]
    if neighbors is None:
        neighbors = m - f - 2
    if neighbors < 1 or neighbors > m - 1:
        raise EstimatorError(f"krum needs m >= f + 3 (m={m}, f={f})")
    return _scores_from_dists(pairwise_sq_dists(x), neighbors)


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    m = x.shape[0]
    if m * m * x.shape[1] <= 4_000_000:
        # exact differences keep score ties exact
        return ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    return _sq_dists(x)


def _scores_from_dists(d2: np.ndarray, neighbors: int) -> np.ndarray:
    d2 = d2 + np.diag(np.full(d2.shape[0], np.inf))
    nearest = np.sort(d2, axis=1)[:, :neighbors]
    return nearest.sum(axis=1)


def krum_index(updates, f: int, neighbors: int | None = None) -> int:
    # argmin returns the first minimiser, i.e. the lowest row index on ties
    return int(np.argmin(krum_scores(updates, f, neighbors)))


def krum(updates, f: int) -> np.ndarray:
    x = as_sample_matrix(updates)
    if x.shape[0] < f + 3:
        raise EstimatorError(f"krum needs m >= f + 3 (m={x.shape[0]}, f={f})")
    return x[krum_index(x, f)].copy()


BULYAN_INNER = ("krum", "coord-median", "coord-trimmed-mean", "geometric-median")


def bulyan_selection(updates, f: int, inner: str = "krum") -> list[int]:
    """Indices of the ``m - 2f`` rows picked one at a time by ``inner``."""
    x = as_sample_matrix(updates)
    m = x.shape[0]
    if m < 4 * f + 3:
        raise EstimatorError(f"bulyan needs m >= 4f + 3 (m={m}, f={f})")
    if inner not in BULYAN_INNER:
        raise EstimatorError(f"unknown bulyan inner rule {inner!r}")
    remaining = list(range(m))
    selected = []
    d2 = pairwise_sq_dists(x) if inner == "krum" else None
    for _ in range(m - 2 * f):
        if len(remaining) == 1:
            pick = 0
        else:
            sub = x[remaining]
            if inner == "krum":
                neighbors = min(max(len(remaining) - f - 2, 1), len(remaining) - 1)
                pick = int(np.argmin(_scores_from_dists(d2[np.ix_(remaining, remaining)], neighbors)))
            else:
                if inner == "coord-median":
                    target = coord_median(sub)
                elif inner == "coord-trimmed-mean":
                    target = _trim_rows(sub, min(f, (len(remaining) - 1) // 2))
                else:
                    target = geometric_median(sub)
                pick = int(np.argmin(((sub - target) ** 2).sum(axis=1)))
        selected.append(remaining.pop(pick))
    return selected


def bulyan(updates, f: int, inner: str = "krum") -> np.ndarray:
    """Select ``m - 2f`` rows with ``inner``, then trim ``f`` per side and average."""
    x = as_sample_matrix(updates)
    chosen = bulyan_selection(x, f, inner)
    return _trim_rows(x[chosen], f)


def weiszfeld(updates, tol: float = 1e-10, max_iter: int = 10_000):
    """Geometric median by Weiszfeld iteration with the Vardi-Zhang fix.

    Returns ``(point, iterations, converged)``.
    """
    x = as_sample_matrix(updates)
    scale = max(float(np.abs(x).max()), 1.0)
    y = x.mean(axis=0)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        diff = x - y
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        at = dist <= 1e-14 * scale
        inv = np.where(at, 0.0, 1.0 / np.where(at, 1.0, dist))
        pull = (diff * inv[:, None]).sum(axis=0)  # minus the gradient
        pull_norm = float(np.linalg.norm(pull))
        multiplicity = int(at.sum())
        if pull_norm <= max(tol * len(x), multiplicity):
            converged = True
            break
        target = (x * inv[:, None]).sum(axis=0) / inv.sum()
        if multiplicity:
            ratio = multiplicity / pull_norm
            target = (1.0 - ratio) * target + ratio * y
        step = float(np.linalg.norm(target - y))
        y = target
        if step <= tol * scale:
            converged = True
            break
    # snap onto a data point when it satisfies the subgradient optimality test
    diff = x - y
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    nearest = int(np.argmin(dist))
    if dist[nearest] > 0 and (not converged or dist[nearest] <= 1e-4 * scale):
        cand = x[nearest]
        cdiff = x - cand
        cdist = np.sqrt(np.einsum("ij,ij->i", cdiff, cdiff))
        at = cdist <= 1e-14 * scale
        rest = ~at
        pull = (cdiff[rest] / cdist[rest, None]).sum(axis=0)
        if np.linalg.norm(pull) <= at.sum():
            y = cand.copy()
            converged = True
    return y, it, converged


def geometric_median(updates, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    return weiszfeld(updates, tol, max_iter)[0]
