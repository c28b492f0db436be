"""Filtering, No-regret, the KL projection and thresholds."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byzagg.core import RngState
from byzagg.estimators import (
    EstimatorConfig,
    ThresholdError,
    WeightCollapseError,
    aggregate,
    compute_threshold,
    filtering,
    kl_project_capped_simplex,
    no_regret,
    prefilter,
)
from byzagg.estimators import filters as filters_mod
from byzagg.oracles import kl_divergence, kl_grid_projection


def test_filtering_early_exit_and_single_row():
    x = np.array([[0.0], [1.0], [2.0]])
    res = filtering(x, xi=1.0)
    assert res.iterations == 0 and res.mean[0] == 1.0
    one = filtering([[4.0, -1.0]], xi=0.0)
    assert one.iterations == 0 and np.array_equal(one.mean, [4.0, -1.0])


def test_filtering_removes_far_point_first():
    x = np.array([[0.0]] * 9 + [[100.0]])
    res = filtering(x, xi=1.0)
    assert res.iterations == 1
    assert res.weights[9] == 0.0
    assert res.mean[0] == 0.0


def test_filtering_aggregate_example():
    x = np.array([[0.0]] * 90 + [[50.0]] * 10)
    cfg = EstimatorConfig("filtering", epsilon=0.1, xi=1.0)
    assert abs(aggregate(cfg, x)[0]) < 0.2


def test_filtering_weight_collapse():
    # both rows share the largest quasi-gradient, so one step zeroes everything
    with pytest.raises(WeightCollapseError):
        filtering([[0.0], [1.0]], xi=0.0)


def _trace_filtering(x, xi):
    """Weights after each filtering step, by re-running with ``max_iter = 0, 1, 2, ...``."""
    out = []
    for limit in range(x.shape[0] + 1):
        res = filtering(x, xi, max_iter=limit)
        out.append(res.weights)
        if res.converged:
            break
    return out


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_filtering_monotone_support(seed):
    rng = RngState(seed)
    x = np.vstack([rng.normal((30, 3)), 8.0 + rng.derive("bad").normal((6, 3))])
    trace = _trace_filtering(x, xi=2.0)
    for before, after in zip(trace, trace[1:]):
        assert np.count_nonzero(after) < np.count_nonzero(before)
        assert np.all((before == 0) <= (after == 0))


def test_kl_projection_examples():
    np.testing.assert_allclose(kl_project_capped_simplex(np.full(5, 0.2), 0.3), np.full(5, 0.2))
    np.testing.assert_allclose(kl_project_capped_simplex([0.9, 0.1], 0.6), [0.6, 0.4])
    with pytest.raises(ValueError):
        kl_project_capped_simplex([0.5, 0.5, 0.0], 0.4)
    with pytest.raises(ValueError):
        kl_project_capped_simplex([0.5, 0.5], 0.4)


@settings(max_examples=60)
@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=40), st.floats(0.0, 1.0))
def test_kl_projection_feasible(raw, frac):
    q_tilde = np.asarray(raw)
    support = np.count_nonzero(q_tilde)
    if support == 0:
        return
    cap = 1.0 / support + frac * (1.0 - 1.0 / support)
    q = kl_project_capped_simplex(q_tilde, cap)
    assert abs(q.sum() - 1.0) <= 1e-12
    assert np.all(q >= 0) and np.all(q <= cap + 1e-12)
    assert np.all(q[q_tilde == 0] == 0)


def test_kl_projection_against_grid():
    rng = RngState(21)
    for trial in range(5):
        r = rng.derive(trial)
        q_tilde = r.uniform(4) ** 2 + 1e-3
        q_tilde /= q_tilde.sum()
        cap = 0.26 + 0.3 * float(r.derive("cap").uniform())
        ours = kl_project_capped_simplex(q_tilde, cap)
        _, grid_kl = kl_grid_projection(q_tilde, cap, step=2e-3)
        assert kl_divergence(ours, q_tilde) <= grid_kl + 1e-3


def test_no_regret_clean_cluster():
    x = RngState(8).normal((200, 4))
    res = no_regret(x, epsilon=0.1, sigma2=1.0, xi=10.0)
    assert res.iterations <= 2
    np.testing.assert_allclose(res.mean, x.mean(axis=0), atol=1e-12)


def test_no_regret_outliers():
    rng = RngState(9)
    inliers = rng.normal((180, 3))
    outliers = 50.0 / math.sqrt(3) + 0.1 * rng.derive("bad").normal((20, 3))
    x = np.vstack([inliers, outliers])
    xi = compute_threshold("eq1", 0.1, eta=0.5, sigma=1.0, d=3, m=200).xi
    res = no_regret(x, 0.1, 1.0, xi)
    assert np.all(res.weights[180:] < 1e-3)
    assert np.linalg.norm(res.mean - inliers.mean(axis=0)) < 0.2


def test_no_regret_uniform_is_fixed_point():
    # four points on a circle: equal quasi-gradients along any direction through the centre
    x = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    res = no_regret(x, 0.1, 1.0, xi=0.0, max_iter=3)
    np.testing.assert_allclose(res.weights, np.full(4, 0.25), atol=1e-12)


def test_no_regret_projection_feasible(monkeypatch):
    seen = []
    original = filters_mod.kl_project_capped_simplex

    def spy(q_tilde, cap):
        q = original(q_tilde, cap)
        seen.append((q, cap))
        return q

    monkeypatch.setattr(filters_mod, "kl_project_capped_simplex", spy)
    rng = RngState(10)
    x = np.vstack([rng.normal((80, 5)), 3.0 + rng.derive("bad").normal((20, 5))])
    no_regret(x, 0.2, 1.0, xi=1.0, max_iter=30)
    assert seen
    for q, cap in seen:
        assert abs(q.sum() - 1.0) <= 1e-12
        assert np.all(q <= cap + 1e-12)


def test_prefilter_drops_far_rows():
    rng = RngState(11)
    x = np.vstack([rng.normal((50, 10)), 1e3 + rng.normal((5, 10))])
    keep = prefilter(x, 0.1)
    assert set(keep) == set(range(50))


def test_threshold_eq2_value():
    spec = compute_threshold("eq2", 0.2, sigma=1.0, d=1, m=100, n=1, delta=0.5, eta_t=1.0)
    expected = (2 * 0.8 / 0.36) * (1 + math.log(2) / 20)
    assert math.isclose(spec.xi, expected, rel_tol=1e-12)
    assert abs(spec.xi - 4.598) < 5e-4


def test_threshold_eq7_linear_in_d_plus_k():
    vals = [compute_threshold("eq7", 0.2, sigma=2.0, d=d, m=100, n=5, k=10, eta_t=0.5).xi for d in (10, 20, 30)]
    assert math.isclose(vals[1] - vals[0], vals[2] - vals[1], rel_tol=1e-12)
    # C_bucket * eta_t^2 (d + k) sigma^2 / (m n)
    assert math.isclose(vals[0], 4.0 * 0.25 * 20 * 4.0 / 500, rel_tol=1e-12)


def test_threshold_small_epsilon_clamped():
    big = compute_threshold("eq2", 1e-9, d=10, m=100).xi
    assert math.isfinite(big)
    assert big == compute_threshold("eq2", 1e-3, d=10, m=100).xi
    assert big > 50 * compute_threshold("eq2", 0.2, d=10, m=100).xi


def test_threshold_breakdown():
    with pytest.raises(ThresholdError):
        compute_threshold("eq2", 0.5)
    with pytest.raises(ThresholdError):
        compute_threshold("eq1", 0.3, eta=0.5)  # 1 - 3.5 * 0.3 < 0
    assert compute_threshold("eq1", 0.2, eta=0.5).xi > 0
    with pytest.raises(ThresholdError):
        compute_threshold("eq1b", 0.2, eta=0.5)  # 1 - 7 * 0.2 < 0
    with pytest.raises(ValueError):
        compute_threshold("manual", 0.1)


@pytest.mark.parametrize("variant", ["eq1", "eq1b", "eq2", "eq4", "eq5", "eq6", "eq7"])
def test_threshold_monotone_and_above_floor(variant):
    kw = dict(epsilon=0.05, d=8, m=200, n=4, k=20, eta_t=0.5)
    lo = compute_threshold(variant, sigma=1.0, **kw)
    hi = compute_threshold(variant, sigma=2.0, **kw)
    wide = compute_threshold(variant, sigma=1.0, **{**kw, "d": 16})
    assert hi.xi > lo.xi and wide.xi > lo.xi
    assert lo.xi >= lo.floor
