"""Scaled-down acceptance checks A1..A9.

Each check returns a :class:`CriterionResult` with the measured value and the
threshold it was compared against. ``run_suite`` drives them for the CLI and
the test-suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import oracles
from .attacks import AttackSpec, malicious_count, tma
from .core import RngState
from .estimators import (
    EstimatorConfig,
    bucketize,
    bulyan,
    corrupted_bucket_count,
    default_bucket_count,
    kl_project_capped_simplex,
    krum_index,
    quiet_aggregate,
)
from .estimators.config import KINDS
from .fl_sim import ExperimentConfig, loglog_slope, plateau, rate_sweep, simulate, theorem31_envelope
from .secure_agg import (
    SecureAggConfig,
    client_uploads,
    dequantize,
    field_sum,
    quantize,
)
from .spectral import WeightedEmpirical, top_eigenpair


@dataclass(frozen=True)
class CriterionResult:
    cid: str
    passed: bool
    measured: str
    threshold: str
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        text = f"{self.cid} {verdict} measured: {self.measured} | threshold: {self.threshold}"
        if self.detail:
            text += f" | {self.detail}"
        return text + f" ({self.seconds:.1f}s)"


def a3_config(**overrides) -> ExperimentConfig:
    """The quadratic instance shared by A3, A5 and A6."""
    base = ExperimentConfig(
        m=100, n=20, d=32, epsilon=0.2, H=1, T=100,
        estimator=EstimatorConfig(kind="filtering"),
        attack=AttackSpec("ima"),
        seed=0,
    )
    return replace(base, **overrides)


def a1_errors(d: int, kind: str, seeds: int = 20, m: int = 200, epsilon: float = 0.2):
    """Per-seed errors of ``kind`` against TMA: ``(vs inlier sample mean, vs true mean)``."""
    f = malicious_count(epsilon, m)
    cfg = EstimatorConfig(kind=kind, epsilon=epsilon)
    agg, true = [], []
    for s in range(seeds):
        rng = RngState(s).derive("a1", d)
        x = rng.normal((m, d))
        x[:f] = tma(x[f:], 0.1, f)
        est = quiet_aggregate(cfg, x, rng.derive("estimator")).value
        agg.append(float(np.linalg.norm(est - x[f:].mean(axis=0))))
        true.append(float(np.linalg.norm(est)))
    return np.array(agg), np.array(true)


def check_a1(seeds: int = 20) -> CriterionResult:
    med = {}
    for kind in ("coord-median", "filtering"):
        for d in (16, 256):
            agg, true = a1_errors(d, kind, seeds)
            med[kind, d] = (float(np.median(agg)), float(np.median(true)))
    cm_ratio = med["coord-median", 256][0] / med["coord-median", 16][0]
    fi_ratio = med["filtering", 256][0] / med["filtering", 16][0]
    gap = med["filtering", 256][0] / med["coord-median", 256][0]
    ok = cm_ratio >= 2.5 and fi_ratio <= 1.8 and gap < 0.5
    true_cm = med["coord-median", 256][1] / med["coord-median", 16][1]
    true_fi = med["filtering", 256][1] / med["filtering", 16][1]
    return CriterionResult(
        "A1", ok,
        f"median ratio {cm_ratio:.2f}, filtering ratio {fi_ratio:.2f}, filtering/median at d=256 {gap:.3f}",
        "median >= 2.5, filtering <= 1.8, filtering/median < 0.5",
        f"errors vs inlier sample mean; vs true mean the ratios are {true_cm:.2f} and {true_fi:.2f}",
    )


A2_KINDS = tuple(k for k in KINDS if k != "mean")


def check_a2(seeds: int = 20, T: int = 50) -> CriterionResult:
    base = ExperimentConfig(m=100, n=20, d=32, epsilon=0.0, T=T)

    def median_plateau(kind):
        cfg = replace(base, estimator=EstimatorConfig(kind=kind))
        return float(np.median([plateau(simulate(replace(cfg, seed=s)).records) for s in range(seeds)]))

    ref = median_plateau("mean")
    ratios = {kind: median_plateau(kind) / ref for kind in A2_KINDS}
    worst = max(ratios, key=ratios.get)
    return CriterionResult(
        "A2", ratios[worst] <= 3.0,
        f"worst ratio {ratios[worst]:.3f} ({worst}), mean plateau {ref:.4f}",
        "<= 3.0 for every estimator",
    )


def contraction_factor(records, w0_err: float) -> float:
    """Geometric-mean per-round contraction until the error first drops to twice the plateau."""
    floor = 2.0 * plateau(records)
    for rec in records:
        if rec.param_err <= floor:
            return (rec.param_err / w0_err) ** (1.0 / rec.round)
    return records[-1].param_err / w0_err


def check_a3() -> CriterionResult:
    cfg = a3_config()
    run = simulate(cfg)
    L = lam = 2.0
    rho = 1.0 - lam / (L + lam)
    env = theorem31_envelope(run.records, L, lam, run.w0_err, slack=0.1)
    pop = theorem31_envelope(run.records, L, lam, run.w0_err, slack=0.1, reference="population")
    factor = contraction_factor(run.records, run.w0_err)
    ok = env.violations == 0 and factor <= rho + 0.05
    first = ", ".join(str(r) for r in env.violating_rounds[:5])
    return CriterionResult(
        "A3", ok,
        f"{env.violations} violations (first rounds: {first or '-'}), contraction {factor:.3f}",
        f"0 violations at slack 0.1, contraction <= {rho + 0.05:.2f}",
        f"population-referenced envelope: {pop.violations} violations",
    )


def check_a4(trials: int = 100) -> CriterionResult:
    rng = RngState(4).derive("a4")
    failures = 0
    for t in range(trials):
        r = rng.derive(t)
        gen = r.generator()
        size = int(gen.integers(1, 17))
        d = int(gen.integers(1, 65))
        cfg = SecureAggConfig(clip=float(gen.uniform(0.5, 5.0)))
        updates = 2.0 * r.derive("v").normal((size, d))
        members = sorted(int(i) for i in gen.choice(1000, size=size, replace=False))
        plain, uploads = client_uploads(cfg, members, updates, r.derive("protocol"), t)
        if not np.array_equal(field_sum(uploads, cfg.modulus), field_sum(plain, cfg.modulus)):
            failures += 1
    return CriterionResult("A4", failures == 0, f"{failures} failures in {trials} buckets", "0 failures")


def check_a5(vectors: int = 1000) -> CriterionResult:
    rng = RngState(5).derive("a5")
    worst_ratio = 0.0
    for i in range(vectors):
        r = rng.derive(i)
        gen = r.generator()
        cfg = SecureAggConfig(clip=float(gen.uniform(0.1, 10.0)), levels=int(gen.integers(3, 1 << 16)))
        v = cfg.clip * 1.5 * r.derive("v").normal(int(gen.integers(1, 65)))
        err = np.abs(dequantize(cfg, quantize(cfg, v)) - np.clip(v, -cfg.clip, cfg.clip)).max()
        worst_ratio = max(worst_ratio, err / (cfg.clip / (cfg.levels - 1)))
    plain = plateau(simulate(a3_config()).records)
    secure = plateau(simulate(a3_config(secure=True)).records)
    change = abs(secure - plain) / plain
    fine = plateau(simulate(a3_config(secure=True, secure_levels=1 << 20)).records)
    ok = worst_ratio <= 1.0 + 1e-9 and change < 0.01
    return CriterionResult(
        "A5", ok,
        f"round-trip error / (C/(levels-1)) max {worst_ratio:.3f}; plateau {plain:.4f} -> {secure:.4f} ({100 * change:.2f}%)",
        "ratio <= 1, plateau change < 1%",
        f"with 2^20 levels the change is {100 * abs(fine - plain) / plain:.2f}%",
    )


def check_a6(seeds: int = 10) -> CriterionResult:
    cells = rate_sweep(a3_config(), "epsilon", [0.2, 0.4], seeds=seeds)
    ratio = cells[1].plateau / cells[0].plateau
    return CriterionResult(
        "A6", ratio <= 2.0,
        f"plateau eps=0.4 {cells[1].plateau:.4f} / eps=0.2 {cells[0].plateau:.4f} = {ratio:.3f}",
        "<= 2.0",
    )


def check_a7(trials: int = 1000) -> CriterionResult:
    worst_excess = -math.inf
    checked = 0
    for eps in (0.1, 0.2, 0.3, 0.4):
        m, delta = 100, 0.1
        k = default_bucket_count(eps, m, delta)
        budget = malicious_count(eps, m)
        rng = RngState(7).derive("a7", eps)
        bad = np.sort(rng.derive("malicious").permutation(m)[:budget])
        for t in range(trials):
            count = corrupted_bucket_count(bucketize(m, k, rng.derive(t)), bad)
            worst_excess = max(worst_excess, count - budget)
            checked += 1
    return CriterionResult(
        "A7", worst_excess <= 0,
        f"max(corrupted buckets - eps*m) = {worst_excess} over {checked} assignments",
        "<= 0",
    )


def check_a8(instances: int = 50) -> CriterionResult:
    rng = RngState(8).derive("a8")
    kl_worst = 0.0
    for i in range(instances):
        gen = rng.derive("kl", i).generator()
        q = gen.uniform(0.05, 1.0, size=4)
        cap = float(gen.uniform(0.26, 0.45))
        ours = kl_project_capped_simplex(q, cap)
        _, grid = oracles.kl_grid_projection(q, cap)
        kl_worst = max(kl_worst, abs(oracles.kl_divergence(ours, q / q.sum()) - grid))
    eig_worst = 0.0
    for i in range(instances):
        r = rng.derive("eig", i)
        gen = r.generator()
        d = int(gen.integers(1, 9))
        x = r.derive("x").normal((int(gen.integers(d + 2, 30)), d)) * gen.uniform(0.2, 3.0, size=d)
        we = WeightedEmpirical(x)
        eig = top_eigenpair(we, tol=1e-12, max_iter=100_000, rng=r.derive("power"))
        values, vectors = oracles.jacobi_eigh(oracles.weighted_covariance(x, we.weights))
        v_ref = vectors[:, -1]
        vec_err = min(np.linalg.norm(eig.vector - v_ref), np.linalg.norm(eig.vector + v_ref))
        eig_worst = max(eig_worst, abs(eig.value - values[-1]) / values[-1], vec_err)
    mismatches = 0
    for i in range(instances):
        r = rng.derive("krum", i)
        gen = r.generator()
        m = int(gen.integers(3, 9))
        x = r.derive("x").normal((m, int(gen.integers(1, 4))))
        f = int(gen.integers(0, m - 2))
        if krum_index(x, f) != oracles.krum_enumeration(x, f):
            mismatches += 1
        fb = int(gen.integers(0, (m - 3) // 4 + 1))
        if not np.allclose(bulyan(x, fb), oracles.bulyan_enumeration(x, fb), rtol=0, atol=1e-12):
            mismatches += 1
    ok = kl_worst <= 1e-3 and eig_worst <= 1e-6 and mismatches == 0
    return CriterionResult(
        "A8", ok,
        f"KL gap {kl_worst:.2e}, eigen rel err {eig_worst:.2e}, Krum/Bulyan mismatches {mismatches}",
        "KL <= 1e-3, eigen <= 1e-6, 0 mismatches",
    )


A9_EPS = (0.05, 0.1, 0.2, 0.4)
A9_N = (10, 40, 160)


def a9_config(**overrides) -> ExperimentConfig:
    base = ExperimentConfig(
        m=1000, n=20, d=1, epsilon=0.2, T=10,
        estimator=EstimatorConfig(kind="filtering"),
        attack=AttackSpec("lower-bound"),
    )
    return replace(base, **overrides)


def check_a9(seeds: int = 10) -> CriterionResult:
    eps_cells = rate_sweep(a9_config(), "epsilon", A9_EPS, seeds=seeds)
    eps_slope = loglog_slope(A9_EPS, [c.plateau for c in eps_cells])
    n_cells = rate_sweep(a9_config(), "n", A9_N, seeds=seeds)
    n_slope = loglog_slope(A9_N, [c.plateau for c in n_cells])
    worst = math.inf
    worst_kind = None
    for kind in KINDS:
        cfg = a9_config(m=200, estimator=EstimatorConfig(kind=kind))
        for cell in rate_sweep(cfg, "epsilon", A9_EPS, seeds=seeds):
            ratio = cell.plateau / (cfg.sigma * math.sqrt(cell.value / cfg.n))
            if ratio < worst:
                worst, worst_kind = ratio, f"{kind} at eps={cell.value}"
    ok = 0.3 <= eps_slope <= 0.7 and -0.7 <= n_slope <= -0.3 and worst >= 0.1
    return CriterionResult(
        "A9", ok,
        f"eps slope {eps_slope:.3f}, n slope {n_slope:.3f}, min plateau/(sigma sqrt(eps/n)) {worst:.3f} ({worst_kind})",
        "eps slope in [0.3, 0.7], n slope in [-0.7, -0.3], ratio >= 0.1",
    )


CRITERIA = {
    "A1": check_a1,
    "A2": check_a2,
    "A3": check_a3,
    "A4": check_a4,
    "A5": check_a5,
    "A6": check_a6,
    "A7": check_a7,
    "A8": check_a8,
    "A9": check_a9,
}


def parse_suite(text: str) -> list[str]:
    if text.strip().lower() in ("", "all"):
        return list(CRITERIA)
    ids = [part.strip().upper() for part in text.split(",") if part.strip()]
    unknown = [i for i in ids if i not in CRITERIA]
    if unknown:
        raise KeyError(", ".join(unknown))
    return ids


def run_criterion(cid: str) -> CriterionResult:
    started = time.perf_counter()
    res = CRITERIA[cid]()
    return replace(res, seconds=time.perf_counter() - started)


def run_suite(ids) -> list[CriterionResult]:
    return [run_criterion(cid) for cid in ids]
