"""Slow reference implementations used as independent checks.

Nothing here is used on the simulation path. Each function recomputes a
quantity by brute force or by a different algorithm than the library code.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def jacobi_eigh(a, tol: float = 1e-15, max_sweeps: int = 100):
    """Cyclic Jacobi rotations on a symmetric matrix; returns ``(values, vectors)`` ascending."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q], rot[q, p] = s, -s
                a = rot.T @ a @ rot
                v = v @ rot
    values = np.diag(a).copy()
    order = np.argsort(values)
    return values[order], v[:, order]


def weighted_covariance(x, q):
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    mu = q @ x
    c = x - mu
    return sum(q[i] * np.outer(c[i], c[i]) for i in range(x.shape[0]))


def kl_divergence(q, p) -> float:
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    mask = q > 0
    return float(np.sum(q[mask] * np.log(q[mask] / p[mask])))


def _xlogx_over(t, p):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = t[pos] * np.log(t[pos] / p)
    return out


def kl_grid_projection(q_tilde, cap: float, step: float = 1e-3):
    """Best point of a ``step`` grid in ``{sum q = 1, 0 <= q_i <= cap}`` for four entries.

    Three coordinates are gridded (the cap is added as a grid point so active
    bounds are reachable); the remaining one is solved from the sum. The solved
    coordinate is the one with the smallest ``q_tilde``: for ``cap > 1/4`` it
    can never sit at the cap at the optimum, so solving for it costs no accuracy.
    """
    p = np.asarray(q_tilde, dtype=float)
    if p.shape != (4,):
        raise ValueError("grid oracle handles exactly four entries")
    p = p / p.sum()
    solved = int(np.argmin(p))
    gridded = [i for i in range(4) if i != solved]
    ticks = np.union1d(np.arange(0.0, cap + 1e-12, step), [cap])
    t_a, t_b, t_c = (_xlogx_over(ticks, p[i]) for i in gridded)
    partial = t_b[:, None] + t_c[None, :]
    sums = ticks[:, None] + ticks[None, :]
    best, best_q = math.inf, None
    for a, qa in enumerate(ticks):
        rest = 1.0 - qa - sums
        ok = (rest >= -1e-12) & (rest <= cap + 1e-12)
        if not ok.any():
            continue
        rest = np.clip(rest, 0.0, None)
        total = np.full(rest.shape, np.inf)
        total[ok] = t_a[a] + partial[ok] + _xlogx_over(rest[ok], p[solved])
        b, c = np.unravel_index(np.argmin(total), total.shape)
        if total[b, c] < best:
            best = float(total[b, c])
            best_q = np.empty(4)
            best_q[gridded] = (qa, ticks[b], ticks[c])
            best_q[solved] = rest[b, c]
    return best_q, best


def krum_enumeration(x, f: int, neighbors: int | None = None) -> int:
    """Krum by enumerating every neighbour subset of every row."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    if neighbors is None:
        neighbors = m - f - 2
    best, best_i = math.inf, None
    for i in range(m):
        others = [j for j in range(m) if j != i]
        dist = {j: float(((x[i] - x[j]) ** 2).sum()) for j in others}
        score = min(sum(dist[j] for j in subset) for subset in itertools.combinations(others, neighbors))
        if score < best:
            best, best_i = score, i
    return best_i


def bulyan_enumeration(x, f: int) -> np.ndarray:
    """Bulyan with Krum selection, every step recomputed from scratch."""
    x = np.asarray(x, dtype=float)
    m, d = x.shape
    remaining = list(range(m))
    chosen = []
    for _ in range(m - 2 * f):
        if len(remaining) == 1:
            chosen.append(remaining.pop())
            break
        nb = min(max(len(remaining) - f - 2, 1), len(remaining) - 1)
        pick = krum_enumeration(x[remaining], f, nb)
        chosen.append(remaining.pop(pick))
    out = np.empty(d)
    for j in range(d):
        column = sorted(float(x[i, j]) for i in chosen)
        kept = column[f : len(column) - f]
        out[j] = sum(kept) / len(kept)
    return out
