import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byzagg.core import RngState
from byzagg.oracles import jacobi_eigh, weighted_covariance
from byzagg.spectral import (
    WeightedEmpirical,
    dense_top_eigenpair,
    quasi_gradient,
    split_intervals,
    top_eigenpair,
    weighted_mean,
)


def test_weighted_mean_examples():
    row = np.array([1.0, -3.0, 2.5])
    assert np.array_equal(weighted_mean(WeightedEmpirical(np.tile(row, (4, 1)))), row)
    assert np.array_equal(weighted_mean(WeightedEmpirical([[1.0, 2.0], [5.0, 6.0]], [1.0, 0.0])), [1.0, 2.0])
    assert weighted_mean(WeightedEmpirical([[0.0], [4.0]], [0.25, 0.75]))[0] == 3.0


def test_weights_validated():
    with pytest.raises(ValueError):
        WeightedEmpirical([[0.0], [1.0]], [0.5, 0.6])
    with pytest.raises(ValueError):
        WeightedEmpirical([[0.0], [1.0]], [1.5, -0.5])


def test_top_eigenpair_examples():
    flat = top_eigenpair(WeightedEmpirical(np.ones((5, 3))))
    assert flat.value == 0.0

    pm = top_eigenpair(WeightedEmpirical([[-1.0], [1.0]]))
    assert abs(pm.value - 1.0) < 1e-9 and abs(abs(pm.vector[0]) - 1.0) < 1e-12

    cross = WeightedEmpirical([[1, 0], [-1, 0], [0, 2], [0, -2]])
    res = top_eigenpair(cross)
    assert res.converged
    assert abs(res.value - 2.0) < 1e-6
    assert abs(abs(res.vector[1]) - 1.0) < 1e-6
    values, _ = jacobi_eigh(weighted_covariance(cross.samples, cross.weights))
    np.testing.assert_allclose(values, [0.5, 2.0], atol=1e-12)


def _random_instance(seed, m, d):
    rng = RngState(seed)
    x = rng.derive("x").normal((m, d)) * rng.derive("s").uniform(d) * 3
    q = rng.derive("q").uniform(m) + 0.01
    return WeightedEmpirical(x, q / q.sum())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 30), st.integers(1, 8))
def test_top_eigenpair_matches_jacobi(seed, m, d):
    we = _random_instance(seed, m, d)
    values, _ = jacobi_eigh(weighted_covariance(we.samples, we.weights))
    top = values[-1]
    res = top_eigenpair(we, tol=1e-10, max_iter=5000)
    # a degenerate top space can slow power iteration; the value still has to be right
    assert abs(res.value - top) <= 1e-6 * max(top, 1e-12) + 1e-12
    assert abs(np.linalg.norm(res.vector) - 1.0) < 1e-9
    dense = dense_top_eigenpair(we)
    assert abs(dense.value - top) <= 1e-9 * max(top, 1e-12) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 20), st.integers(1, 6))
def test_rayleigh_identity(seed, m, d):
    we = _random_instance(seed, m, d)
    cov = weighted_covariance(we.samples, we.weights)
    res = top_eigenpair(we)
    g = quasi_gradient(we, res.vector)
    assert np.all(g >= 0)
    rq = res.vector @ cov @ res.vector
    assert abs(we.weights @ g - rq) <= 1e-10 * max(1.0, rq)

    v = RngState(seed).derive("v").unit_vector(d)
    quad = v @ cov @ v
    assert -1e-12 <= quad <= dense_top_eigenpair(we).value * (1 + 1e-9) + 1e-12


def test_quasi_gradient_examples():
    we = WeightedEmpirical([[3.0], [-3.0]])
    assert np.array_equal(quasi_gradient(we, np.array([1.0])), [9.0, 9.0])
    same = WeightedEmpirical(np.ones((3, 2)))
    assert np.array_equal(quasi_gradient(same, np.array([0.6, 0.8])), [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        quasi_gradient(same, np.array([1.0]))


def test_split_intervals():
    assert split_intervals(10, 10) == [range(0, 10)]
    assert split_intervals(10, 4) == [range(0, 4), range(4, 8), range(8, 10)]
    assert split_intervals(1000, 1000) == [range(0, 1000)]


@given(st.integers(1, 500), st.integers(1, 600))
def test_split_intervals_partition(d, size):
    blocks = split_intervals(d, size)
    assert [i for b in blocks for i in b] == list(range(d))
    assert all(len(b) == size for b in blocks[:-1])
