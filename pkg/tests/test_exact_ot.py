import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import polytope_vertices, random_measure
from wext.errors import InstanceTooLarge, NotOneDimensional
from wext.exact_ot import (
    common_refinement,
    quantile,
    sq_dist,
    w2_sq_1d,
    w2_sq_exact,
)
from wext.measures import AtomicMeasure, dirac


def test_dirac_pair():
    v, plan = w2_sq_exact(dirac([1.0, 2.0]), dirac([-1.0, 0.0]))
    assert v == pytest.approx(8.0)
    assert np.allclose(plan.entries, [[1.0]])


def test_identical_uniform_pair():
    m = AtomicMeasure([[0.0], [1.0]])
    v, plan = w2_sq_exact(m, m)
    assert v == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(plan.entries, np.eye(2) / 2)


def test_monotone_matching_two_by_two():
    v, plan = w2_sq_exact(AtomicMeasure([[0.0], [2.0]]), AtomicMeasure([[1.0], [3.0]]))
    assert v == pytest.approx(1.0)
    assert np.allclose(plan.entries, np.eye(2) / 2)


@pytest.mark.parametrize("shape", [(2, 2), (2, 3), (3, 2)])
def test_optimality_against_vertex_enumeration(shape, rng):
    for _ in range(20):
        mu = random_measure(rng, shape[0], 2)
        nu = random_measure(rng, shape[1], 2)
        C = sq_dist(mu.points, nu.points)
        best = min(float(np.sum(C * V)) for V in polytope_vertices(mu.weights, nu.weights))
        v, plan = w2_sq_exact(mu, nu)
        assert v == pytest.approx(best, rel=1e-12, abs=1e-14)
        assert plan.nnz(1e-14) <= sum(shape) - 1
        row, col = plan.residuals()
        assert max(row, col) <= 1e-12


def test_cap():
    m = AtomicMeasure(np.arange(20.0))
    with pytest.raises(InstanceTooLarge):
        w2_sq_exact(m, m, cap=100)


def test_quantile_examples():
    q = quantile(dirac([3.0]))
    assert np.allclose(q.breakpoints, [1.0]) and np.allclose(q.values, [3.0])
    q = quantile(AtomicMeasure([[-1.0], [1.0]]))
    assert np.allclose(q.breakpoints, [0.5, 1.0]) and np.allclose(q.values, [-1.0, 1.0])
    q = quantile(AtomicMeasure([[5.0], [2.0]], [0.25, 0.75]))
    assert np.allclose(q.breakpoints, [0.75, 1.0]) and np.allclose(q.values, [2.0, 5.0])
    assert q(0.5) == 2.0 and q(0.75) == 2.0 and q(0.76) == 5.0


def test_quantile_rejects_2d():
    with pytest.raises(NotOneDimensional):
        quantile(AtomicMeasure([[0.0, 1.0]]))


def test_quantile_tie_order_and_refinement():
    m = AtomicMeasure([[1.0], [0.0], [1.0]], [0.2, 0.5, 0.3])
    q = quantile(m)
    assert list(q.order) == [1, 0, 2]
    assert np.all(np.diff(q.breakpoints) > 0) and q.breakpoints[-1] == 1.0
    lengths, (v, w), _ = common_refinement(q, quantile(AtomicMeasure([[0.0]])))
    assert np.allclose(v, [0.0, 1.0, 1.0]) and np.allclose(w, 0.0)
    assert lengths.sum() == pytest.approx(1.0)


def test_w2_1d_examples():
    m = AtomicMeasure([[0.0], [1.5], [3.0]], [0.2, 0.3, 0.5])
    assert w2_sq_1d(m, m) == 0.0
    assert w2_sq_1d(dirac([0.0]), dirac([2.5])) == pytest.approx(6.25)
    assert w2_sq_1d(AtomicMeasure([[0.0], [2.0]]), AtomicMeasure([[1.0], [3.0]])) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(1, 50), st.integers(0, 100_000))
def test_w2_1d_matches_lp(M, N, seed):
    rng = np.random.default_rng(seed)
    mu = random_measure(rng, M, 1)
    nu = random_measure(rng, N, 1, shift=rng.normal())
    assert w2_sq_1d(mu, nu) == pytest.approx(w2_sq_exact(mu, nu)[0], abs=1e-9)


def test_symmetry_zero_and_triangle(rng):
    for _ in range(20):
        a, b, c = (random_measure(rng, rng.integers(1, 7), 2) for _ in range(3))
        ab, ba = w2_sq_exact(a, b)[0], w2_sq_exact(b, a)[0]
        assert ab == pytest.approx(ba, rel=1e-10, abs=1e-12)
        assert w2_sq_exact(a, a)[0] == pytest.approx(0.0, abs=1e-12)
        dab, dbc, dac = (np.sqrt(w2_sq_exact(p, q)[0]) for p, q in ((a, b), (b, c), (a, c)))
        assert dac <= dab + dbc + 1e-9


def test_zero_only_for_equal_measures():
    m = AtomicMeasure([[0.0, 0.0], [1.0, 0.0]], [0.4, 0.6])
    other = AtomicMeasure([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5])
    assert w2_sq_exact(m, other)[0] > 1e-3
