import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wext.errors import (
    DimensionMismatch,
    InvalidPlan,
    NonFiniteCoordinate,
    NonPositiveWeight,
    WeightSumMismatch,
)
from wext.measures import (
    AtomicMeasure,
    TransportPlan,
    barycenter,
    check_plan,
    dirac,
    product_plan,
    second_moment,
    validate,
)


def test_validate_uniform_two_point():
    validate([[0.0], [1.0]], [0.5, 0.5])


def test_validate_sum_mismatch():
    with pytest.raises(WeightSumMismatch):
        validate([[0.0], [1.0]], [0.5, 0.6])


def test_validate_zero_weight():
    with pytest.raises(NonPositiveWeight):
        validate([[0.0], [1.0]], [0.0, 1.0])


def test_validate_nonfinite_and_ragged():
    with pytest.raises(NonFiniteCoordinate):
        validate([[np.nan], [1.0]], [0.5, 0.5])
    with pytest.raises(DimensionMismatch):
        validate([[0.0, 1.0], [1.0]], [0.5, 0.5])
    with pytest.raises(DimensionMismatch):
        validate([[0.0], [1.0]], [1.0])


def test_weight_tolerance_is_not_renormalized():
    AtomicMeasure([[0.0], [1.0]], [0.5, 0.5 + 5e-13])
    with pytest.raises(WeightSumMismatch):
        AtomicMeasure([[0.0], [1.0]], [0.5, 0.5 + 1e-11])


def test_measure_is_immutable():
    m = AtomicMeasure([[0.0, 1.0], [2.0, 3.0]])
    with pytest.raises(ValueError):
        m.points[0, 0] = 5.0
    with pytest.raises(AttributeError):
        m.points = np.zeros((2, 2))


def test_scalar_points_read_as_1d():
    m = AtomicMeasure([0.0, 4.0], [0.25, 0.75])
    assert m.dim == 1 and m.size == 2


def test_barycenter_examples():
    assert np.allclose(barycenter(AtomicMeasure([[-1, 0], [1, 0]])), [0, 0])
    assert np.allclose(barycenter(dirac([2, -1])), [2, -1])
    assert np.allclose(barycenter(AtomicMeasure([[0.0], [4.0]], [0.25, 0.75])), [3.0])


def test_second_moment_examples():
    assert second_moment(dirac([0.0])) == 0.0
    assert second_moment(AtomicMeasure([[-1.0], [1.0]])) == pytest.approx(1.0)
    assert second_moment(AtomicMeasure([[0, 1], [1, 0]], [0.5, 0.5])) == pytest.approx(1.0)


def test_product_plan_examples():
    u = AtomicMeasure([[0.0], [1.0]])
    assert np.allclose(product_plan(u, u).entries, 0.25)
    nu = AtomicMeasure([[0.0], [1.0], [3.0]], [0.2, 0.3, 0.5])
    assert np.allclose(product_plan(dirac([5.0]), nu).entries, [[0.2, 0.3, 0.5]])
    a = AtomicMeasure([[0.0], [1.0]], [0.3, 0.7])
    assert np.allclose(product_plan(a, u).entries, [[0.15, 0.15], [0.35, 0.35]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000))
def test_product_plan_marginals(M, N, seed):
    rng = np.random.default_rng(seed)
    a = rng.random(M) + 0.1
    b = rng.random(N) + 0.1
    mu = AtomicMeasure(rng.normal(size=(M, 2)), a / a.sum())
    nu = AtomicMeasure(rng.normal(size=(N, 2)), b / b.sum())
    row, col = product_plan(mu, nu).residuals()
    assert row <= 1e-15 and col <= 1e-15


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_shift_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    w = rng.random(n) + 0.1
    m = AtomicMeasure(rng.normal(size=(n, 3)), w / w.sum())
    v = rng.normal(size=3)
    s = m.shifted(v)
    assert np.allclose(barycenter(s), barycenter(m) + v)
    expect = second_moment(m) + 2 * barycenter(m) @ v + v @ v
    assert second_moment(s) == pytest.approx(expect, rel=1e-12, abs=1e-12)


def test_json_round_trip(tmp_path):
    m = AtomicMeasure([[0.1, 1.0 / 3.0], [2.0, -1e-17]], [0.3, 0.7])
    p = tmp_path / "m.json"
    m.save(p)
    data = json.loads(p.read_text())
    assert set(data) == {"dim", "points", "weights"}
    back = AtomicMeasure.load(p)
    assert np.array_equal(back.points, m.points) and np.array_equal(back.weights, m.weights)


def test_json_default_weights_and_dim_check():
    m = AtomicMeasure.from_dict({"dim": 2, "points": [[0, 0], [1, 1]]})
    assert np.allclose(m.weights, 0.5)
    with pytest.raises(DimensionMismatch):
        AtomicMeasure.from_dict({"dim": 3, "points": [[0, 0], [1, 1]]})


def test_transport_plan_checks():
    a = np.array([0.5, 0.5])
    with pytest.raises(InvalidPlan):
        TransportPlan([[0.5, -0.1], [0.0, 0.6]], a, a)
    with pytest.raises(InvalidPlan):
        TransportPlan([[1.0]], a, a)
    P = TransportPlan([[0.5, 0.0], [0.0, 0.4]], a, a)
    with pytest.raises(InvalidPlan):
        check_plan(P)
    check_plan(TransportPlan(np.eye(2) / 2, a, a))
