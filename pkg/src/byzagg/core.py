"""Shared numeric plumbing: parameter space, synthetic tasks and keyed randomness."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

MEAN_ESTIMATION = "mean-estimation"
LINEAR_REGRESSION = "linear-regression"
TASK_KINDS = (MEAN_ESTIMATION, LINEAR_REGRESSION)

_MASK64 = (1 << 64) - 1


def stream_id(*labels) -> int:
    """Map an arbitrary label tuple to a 64-bit stream id."""
    text = "/".join(str(label) for label in labels)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngState:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Backed by Philox4x64, whose output depends only on the key and the
    counter, so a stream replays identically on every platform.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream", int(self.stream) & _MASK64)

    def derive(self, *labels) -> "RngState":
        """Child stream for a named component (client, round, bucket, ...)."""
        return RngState(self.seed, stream_id(self.stream, *labels))

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size=None):
        return self.generator().random(size)

    def normal(self, size) -> np.ndarray:
        """Standard normals via Box-Muller on the uniform stream."""
        shape = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
        count = int(np.prod(shape, dtype=np.int64))
        pairs = (count + 1) // 2
        u = self.generator().random(2 * pairs)
        u1, u2 = u[:pairs], u[pairs:]
        radius = np.sqrt(-2.0 * np.log1p(-u1))
        angle = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return z[:count].reshape(shape)

    def permutation(self, m: int) -> np.ndarray:
        return self.generator().permutation(m)

    def unit_vector(self, d: int) -> np.ndarray:
        v = self.normal(d)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            v = np.ones(d)
            norm = math.sqrt(d)
        return v / norm


def as_param_vector(w, d: int | None = None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError(f"expected a 1-D parameter vector, got shape {w.shape}")
    if d is not None and w.shape[0] != d:
        raise ValueError(f"dimension mismatch: expected {d}, got {w.shape[0]}")
    if not np.all(np.isfinite(w)):
        raise ValueError("parameter vector has non-finite entries")
    return w


def as_sample_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"expected a non-empty (m, d) sample matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample matrix has non-finite entries")
    return x


@dataclass(frozen=True)
class ParamSpace:
    """Euclidean ball ``{w : ||w - center|| <= radius}``."""

    radius: float
    center: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def center_for(self, d: int) -> np.ndarray:
        if self.center is None:
            return np.zeros(d)
        return as_param_vector(self.center, d)


def project(space: ParamSpace, w) -> np.ndarray:
    """Euclidean projection onto the ball."""
    w = as_param_vector(w)
    center = space.center_for(w.shape[0])
    offset = w - center
    dist = float(np.linalg.norm(offset))
    if dist <= space.radius:
        return w.copy()
    scale = space.radius / dist
    out = center + offset * scale
    # rounding can leave the result a few ulps outside; shrink until a second projection is a no-op
    while float(np.linalg.norm(out - center)) > space.radius:
        scale = np.nextafter(scale, 0.0)
        out = center + offset * scale
    return out


@dataclass(frozen=True)
class TaskSpec:
    """Synthetic convex task with a known optimum.

    mean-estimation: ``f(w; z) = ||w - z||^2`` with ``z ~ N(w*, sigma^2 I)``.
    linear-regression: ``f(w; (x, y)) = (w.x - y)^2 / 2`` with ``x ~ N(0, I)``
    and ``y = x.w* + sigma * noise``; data rows are ``[x, y]``.
    """

    kind: str
    w_star: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        object.__setattr__(self, "w_star", as_param_vector(self.w_star))

    @property
    def d(self) -> int:
        return self.w_star.shape[0]

    @property
    def smoothness(self) -> float:
        return 2.0 if self.kind == MEAN_ESTIMATION else 1.0

    @property
    def strong_convexity(self) -> float:
        return 2.0 if self.kind == MEAN_ESTIMATION else 1.0

    @property
    def gradient_sigma(self) -> float:
        # spectral-norm bound on Cov(grad f) at the optimum
        return 2.0 * self.sigma if self.kind == MEAN_ESTIMATION else self.sigma

    def population_loss(self, w) -> float:
        diff = as_param_vector(w, self.d) - self.w_star
        if self.kind == MEAN_ESTIMATION:
            return float(diff @ diff + self.d * self.sigma**2)
        return float(0.5 * (diff @ diff) + 0.5 * self.sigma**2)

    def population_gradient(self, w) -> np.ndarray:
        diff = as_param_vector(w, self.d) - self.w_star
        return 2.0 * diff if self.kind == MEAN_ESTIMATION else diff


def local_gradient(task: TaskSpec, w, local_data) -> np.ndarray:
    """Exact gradient of one client's empirical risk at ``w``."""
    w = as_param_vector(w, task.d)
    data = np.asarray(local_data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("local data must be a non-empty 2-D array")
    if task.kind == MEAN_ESTIMATION:
        if data.shape[1] != task.d:
            raise ValueError("dimension mismatch between task and data")
        return 2.0 * (w - data.mean(axis=0))
    if data.shape[1] != task.d + 1:
        raise ValueError("regression rows must be [x, y] with d + 1 columns")
    x, y = data[:, :-1], data[:, -1]
    residual = x @ w - y
    return x.T @ residual / data.shape[0]


def sample_client_data(task: TaskSpec, n: int, rng: RngState) -> np.ndarray:
    """Draw ``n`` i.i.d. samples for one client."""
    if n < 1:
        raise ValueError("n must be at least 1")
    d = task.d
    if task.kind == MEAN_ESTIMATION:
        return task.w_star + task.sigma * rng.normal((n, d))
    z = rng.normal((n, d + 1))
    x = z[:, :d]
    y = x @ task.w_star + task.sigma * z[:, d]
    return np.column_stack([x, y])


@dataclass(frozen=True)
class LowerBoundInstance:
    samples: np.ndarray
    at_atom: np.ndarray
    eps_prime: float
    atom: float
    gap: float


def lower_bound_atom(epsilon: float, n: int, sigma: float) -> tuple[float, float, float]:
    """Return ``(eps_prime, atom, gap)`` of the two-point hard instance.

    ``eps_prime = 1 - (1 - eps)^(1/n)`` is the atom mass, the atom sits at
    ``(sigma / 3) sqrt((1 - eps_prime) / eps_prime)``, and ``gap`` is the mean
    difference to the point mass at zero.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    if n < 1:
        raise ValueError("n must be at least 1")
    eps_prime = -math.expm1(math.log1p(-epsilon) / n)
    atom = sigma / 3.0 * math.sqrt((1.0 - eps_prime) / eps_prime)
    return eps_prime, atom, eps_prime * atom


def gen_lower_bound_instance(
    epsilon: float, n: int, sigma: float, rng: RngState, count: int = 1000
) -> LowerBoundInstance:
    """Sample ``count`` points from the two-point distribution."""
    eps_prime, atom, gap = lower_bound_atom(epsilon, n, sigma)
    at_atom = rng.uniform(count) < eps_prime
    samples = np.where(at_atom, atom, 0.0)[:, None]
    return LowerBoundInstance(samples, at_atom, eps_prime, atom, gap)
