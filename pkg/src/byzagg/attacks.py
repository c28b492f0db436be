"""Byzantine adversaries that overwrite the malicious clients' uploads.

The adversary sees every honest update of the round before choosing its own.
TMA and KA follow the published attack ideas (directed deviation against
trimmed mean and Krum) but their exact constructions here are our own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import RngState, as_sample_matrix, lower_bound_atom
from .estimators.classical import krum_index

ATTACK_KINDS = ("none", "sign-flip", "ima", "tma", "ka", "mra", "label-noise", "lower-bound")


def malicious_count(epsilon: float, m: int) -> int:
    return int(math.floor(epsilon * m + 1e-9))


def choose_malicious(m: int, epsilon: float, rng: RngState) -> np.ndarray:
    """Random set of ``floor(eps m)`` client ids, sorted."""
    count = malicious_count(epsilon, m)
    return np.sort(rng.permutation(m)[:count])


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    epsilon: float = 0.0
    malicious_ids: tuple = ()
    scale: float = 5.0
    margin: float = 0.1
    boost: float | None = None
    target: np.ndarray | None = None
    flip_prob: float = 1.0
    direction: np.ndarray | None = None
    per_round: bool = False

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        object.__setattr__(self, "malicious_ids", tuple(int(i) for i in self.malicious_ids))


@dataclass
class RoundContext:
    """What the adversary knows about the current round besides the uploads."""

    global_w: np.ndarray | None = None
    rng: RngState = field(default_factory=lambda: RngState(0))
    run_rng: RngState = field(default_factory=lambda: RngState(0))
    n: int = 1
    sigma: float = 1.0
    # update shift produced by moving a client's data mean by one unit
    data_gain: float = 1.0
    malicious_data: dict = field(default_factory=dict)
    compute_update: Callable | None = None
    flip_labels: Callable | None = None


def sign_flip(benign, scale: float = 1.0) -> np.ndarray:
    return -scale * as_sample_matrix(benign).mean(axis=0)


def ima(benign, scale: float = 5.0) -> np.ndarray:
    """Negatively scaled benign mean: ``<row, mean(benign)> <= 0``."""
    return -scale * as_sample_matrix(benign).mean(axis=0)


def tma(benign, margin: float = 0.1, count: int = 1) -> np.ndarray:
    """Per coordinate, sit ``margin * range`` beyond the benign hull, opposite the mean's sign."""
    x = as_sample_matrix(benign)
    lo, hi = x.min(axis=0), x.max(axis=0)
    offset = margin * (hi - lo)
    row = np.where(x.mean(axis=0) >= 0, lo - offset, hi + offset)
    return np.tile(row, (count, 1))


def _krum_picks_malicious(benign, row, count, f):
    rows = np.vstack([np.tile(row, (count, 1)), benign])
    return krum_index(rows, f) < count


def ka(benign, f: int, max_steps: int = 40) -> tuple[np.ndarray, float]:
    """Krum attack: ``f`` copies of ``mean - lam * sign(mean)`` with the largest ``lam`` Krum still picks.

    Returns ``(rows, lam)``. When even ``lam = 0`` loses, the ``lam = 0`` rows
    are returned.
    """
    x = as_sample_matrix(benign)
    if f == 0:
        return np.empty((0, x.shape[1])), 0.0
    mu = x.mean(axis=0)
    s = np.sign(mu)
    s[s == 0] = 1.0
    m = x.shape[0] + f
    if m < f + 3:
        return np.tile(mu, (f, 1)), 0.0
    picked = lambda lam: _krum_picks_malicious(x, mu - lam * s, f, f)  # noqa: E731
    if not picked(0.0):
        return np.tile(mu, (f, 1)), 0.0
    spread = float(np.sqrt(((x - mu) ** 2).sum(axis=1).max()))
    lo, hi = 0.0, max(4.0 * spread / math.sqrt(x.shape[1]), 1e-12)
    for _ in range(60):
        if not picked(hi):
            break
        lo, hi = hi, 2.0 * hi
    else:
        return np.tile(mu - lo * s, (f, 1)), lo
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        if picked(mid):
            lo = mid
        else:
            hi = mid
    return np.tile(mu - lo * s, (f, 1)), lo


def mra(global_w, target, boost: float) -> np.ndarray:
    """Model replacement: ``boost * (target - global)``."""
    return boost * (np.asarray(target, dtype=float) - np.asarray(global_w, dtype=float))


def lower_bound_shift(epsilon: float, n: int, sigma: float) -> float:
    """Per-client data-mean shift of the two-point hard instance.

    A corrupted client looks like an honest client that drew one atom among
    its ``n`` samples, which moves its local mean by ``atom / n``.
    """
    _, atom, _ = lower_bound_atom(epsilon, n, sigma)
    return atom / n


def lower_bound_adversary(own_updates, epsilon: float, n: int, sigma: float, direction, gain: float = 1.0):
    """Honest-shaped rows shifted along a fixed unit ``direction``."""
    x = as_sample_matrix(own_updates)
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    return x + gain * lower_bound_shift(epsilon, n, sigma) * u


def apply_attack(spec: AttackSpec, updates, ctx: RoundContext | None = None) -> np.ndarray:
    """Replace the rows at ``spec.malicious_ids``; honest rows are returned unchanged."""
    x = as_sample_matrix(updates)
    out = x.copy()
    bad = np.asarray(spec.malicious_ids, dtype=int)
    if spec.kind == "none" or bad.size == 0:
        return out
    ctx = ctx or RoundContext()
    honest_mask = np.ones(x.shape[0], dtype=bool)
    honest_mask[bad] = False
    benign = x[honest_mask]
    count = bad.size
    kind = spec.kind
    if kind == "sign-flip":
        rows = np.tile(sign_flip(benign, spec.scale), (count, 1))
    elif kind == "ima":
        rows = np.tile(ima(benign, spec.scale), (count, 1))
    elif kind == "tma":
        rows = tma(benign, spec.margin, count)
    elif kind == "ka":
        rows, _ = ka(benign, count)
    elif kind == "mra":
        if ctx.global_w is None or spec.target is None:
            raise ValueError("mra needs the global model and a target")
        boost = x.shape[0] if spec.boost is None else spec.boost
        rows = np.tile(mra(ctx.global_w, spec.target, boost / count), (count, 1))
    elif kind == "label-noise":
        if ctx.compute_update is None or ctx.flip_labels is None:
            raise ValueError("label-noise needs the malicious clients' data")
        rows = np.stack([
            ctx.compute_update(ctx.flip_labels(ctx.malicious_data[int(i)], spec.flip_prob, ctx.rng.derive("flip", int(i))))
            for i in bad
        ])
    else:
        direction = spec.direction
        if direction is None:
            direction = ctx.run_rng.derive("lower-bound-direction").unit_vector(x.shape[1])
        rows = lower_bound_adversary(x[bad], spec.epsilon, ctx.n, ctx.sigma, direction, ctx.data_gain)
    out[bad] = rows
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("attack produced non-finite rows")
    return out
