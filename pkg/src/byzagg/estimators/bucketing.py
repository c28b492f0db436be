"""Random bucketing of client updates."""

from __future__ import annotations

import math

import numpy as np

from ..core import RngState, as_sample_matrix


def bucketize(m: int, k: int, rng: RngState) -> list[np.ndarray]:
    """Random permutation of ``range(m)`` cut into ``k`` near-equal contiguous chunks."""
    if not 1 <= k <= m:
        raise ValueError(f"bucket count k={k} out of range [1, {m}]")
    return np.array_split(rng.permutation(m), k)


def default_bucket_count(epsilon: float, m: int, delta: float, rule: str = "theorem") -> int:
    """``floor(2 eps m + log(1/delta))`` (``rule="lemma"``: ``floor(eps m + log(1/delta))``), clamped to ``[1, m]``."""
    if rule not in ("theorem", "lemma"):
        raise ValueError(f"unknown bucket rule {rule!r}")
    mult = 2.0 if rule == "theorem" else 1.0
    k = math.floor(mult * epsilon * m + math.log(1.0 / delta) + 1e-9)
    return int(min(max(k, 1), m))


def bucket_means(updates, buckets) -> np.ndarray:
    x = as_sample_matrix(updates)
    sizes = np.array([len(idx) for idx in buckets])
    if np.any(sizes == 0):
        raise ValueError("empty bucket")
    order = np.concatenate([np.asarray(idx, dtype=int) for idx in buckets])
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return np.add.reduceat(x[order], starts, axis=0) / sizes[:, None]


def corrupted_bucket_count(buckets, malicious) -> int:
    bad = set(int(i) for i in malicious)
    return sum(1 for idx in buckets if bad.intersection(int(i) for i in idx))
