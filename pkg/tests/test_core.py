import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from byzagg.core import (
    LINEAR_REGRESSION,
    MEAN_ESTIMATION,
    ParamSpace,
    RngState,
    TaskSpec,
    gen_lower_bound_instance,
    local_gradient,
    lower_bound_atom,
    project,
    sample_client_data,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_project_examples():
    ball = ParamSpace(1.0)
    assert np.array_equal(project(ball, [0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(project(ball, [3.0, 4.0]), [0.6, 0.8], rtol=0, atol=1e-15)

    shifted = ParamSpace(2.0, np.array([1.0, 0.0]))
    out = project(shifted, [1.0, 5.0])
    np.testing.assert_allclose(out, [1.0, 2.0], atol=1e-15)
    assert math.isclose(np.linalg.norm(out - shifted.center), 2.0)


def test_project_dimension_mismatch():
    with pytest.raises(ValueError):
        project(ParamSpace(1.0, np.zeros(3)), [1.0, 2.0])


@given(arrays(float, 3, elements=finite), st.floats(0.1, 50))
def test_project_idempotent(w, radius):
    ball = ParamSpace(radius)
    once = project(ball, w)
    assert np.array_equal(project(ball, once), once)
    assert np.linalg.norm(once) <= radius * (1 + 1e-12)


@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
def test_project_non_expansive(a, b, c):
    ball = ParamSpace(5.0, c / 100.0)
    pa, pb = project(ball, a), project(ball, b)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) * (1 + 1e-12) + 1e-12
    # any point already in the ball is at least as close to the projection
    inside = project(ball, c)
    assert np.linalg.norm(pa - inside) <= np.linalg.norm(a - inside) + 1e-9


def test_local_gradient_examples():
    task = TaskSpec(MEAN_ESTIMATION, np.zeros(2))
    assert np.array_equal(local_gradient(task, [1.0, 1.0], np.zeros((3, 2))), [2.0, 2.0])
    data = np.array([[1.0, -2.0], [3.0, 0.0]])
    assert np.array_equal(local_gradient(task, data.mean(axis=0), data), [0.0, 0.0])

    reg = TaskSpec(LINEAR_REGRESSION, np.zeros(2))
    np.testing.assert_allclose(local_gradient(reg, [2.0, 0.0], [[1.0, 0.0, 0.0]]), [2.0, 0.0])


def test_local_gradient_empty_data():
    with pytest.raises(ValueError):
        local_gradient(TaskSpec(MEAN_ESTIMATION, np.zeros(2)), [0.0, 0.0], np.zeros((0, 2)))


def _empirical_risk(task, w, data):
    if task.kind == MEAN_ESTIMATION:
        return float(np.mean(((w - data) ** 2).sum(axis=1)))
    x, y = data[:, :-1], data[:, -1]
    return float(np.mean((x @ w - y) ** 2) / 2)


@pytest.mark.parametrize("kind", [MEAN_ESTIMATION, LINEAR_REGRESSION])
def test_local_gradient_finite_differences(kind):
    rng = RngState(3)
    task = TaskSpec(kind, rng.derive("w").normal(5), sigma=0.7)
    data = sample_client_data(task, 12, rng.derive("data"))
    w = rng.derive("at").normal(5)
    grad = local_gradient(task, w, data)
    h = 1e-5
    fd = np.array([
        (_empirical_risk(task, w + h * e, data) - _empirical_risk(task, w - h * e, data)) / (2 * h)
        for e in np.eye(5)
    ])
    assert np.linalg.norm(fd - grad) <= 1e-6 * np.linalg.norm(grad)


def test_sample_client_data():
    w_star = np.array([1.5, -2.0])
    rows = sample_client_data(TaskSpec(MEAN_ESTIMATION, w_star, sigma=0.0), 7, RngState(1))
    assert np.array_equal(rows, np.tile(w_star, (7, 1)))

    task = TaskSpec(MEAN_ESTIMATION, w_star, sigma=1.0)
    big = sample_client_data(task, 10_000, RngState(2))
    eig = np.linalg.eigvalsh(np.cov(big.T))
    assert np.all(np.abs(eig - 1.0) < 0.1)

    again = sample_client_data(task, 50, RngState(9, 4))
    assert np.array_equal(again, sample_client_data(task, 50, RngState(9, 4)))
    assert not np.array_equal(again, sample_client_data(task, 50, RngState(9, 5)))


def test_rng_streams():
    root = RngState(11)
    assert root.derive("client", 3) == RngState(11).derive("client", 3)
    assert root.derive("client", 3) != root.derive("client", 4)
    z = root.derive("z").normal(200_000)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1.0) < 0.01
    u = root.derive("u").unit_vector(9)
    assert math.isclose(np.linalg.norm(u), 1.0)


def test_lower_bound_example():
    eps_prime, atom, gap = lower_bound_atom(0.2, 1, 3.0)
    assert math.isclose(eps_prime, 0.2)
    assert math.isclose(atom, 2.0)  # (3/3) * sqrt(0.8 / 0.2)
    assert math.isclose(gap, 0.4)

    inst = gen_lower_bound_instance(0.2, 1, 3.0, RngState(0), count=20_000)
    assert set(np.unique(inst.samples)) <= {0.0, 2.0}
    assert abs(inst.at_atom.mean() - 0.2) < 0.01


def test_lower_bound_gap_shrinks():
    gaps = [lower_bound_atom(0.2, n, 1.0)[2] for n in (1, 2, 5, 10, 100, 1000)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    tiny = [lower_bound_atom(eps, 1, 1.0)[2] for eps in (1e-2, 1e-4, 1e-6)]
    assert tiny[-1] < 1e-3 and tiny[0] > tiny[1] > tiny[2]
    for bad in (0.0, 0.5, -0.1):
        with pytest.raises(ValueError):
            lower_bound_atom(bad, 1, 1.0)
