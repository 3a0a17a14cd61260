import itertools

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from wext.measures import AtomicMeasure


def random_measure(rng, n, d, *, uniform=False, scale=1.0, shift=0.0):
    pts = rng.normal(size=(n, d)) * scale + shift
    if uniform:
        return AtomicMeasure(pts)
    w = rng.random(n) + 0.2
    return AtomicMeasure(pts, w / w.sum())


def in_hull_2d(X, P, tol=1e-9):
    """Boolean mask: which rows of ``P`` lie in conv(X) (2D, handles degenerate X)."""
    X = np.asarray(X, dtype=float)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    scale = max(1.0, float(np.abs(X).max()))
    tol = tol * scale
    uniq = np.unique(X, axis=0)
    if uniq.shape[0] == 1:
        return np.linalg.norm(P - uniq[0], axis=1) <= tol
    centered = uniq - uniq[0]
    if np.linalg.matrix_rank(centered, tol=1e-12 * scale) == 1:
        # segment: project onto the direction, check distance and range
        d = centered[np.argmax(np.linalg.norm(centered, axis=1))]
        d = d / np.linalg.norm(d)
        s = (uniq - uniq[0]) @ d
        lo, hi = s.min(), s.max()
        q = (P - uniq[0]) @ d
        off = np.linalg.norm((P - uniq[0]) - np.outer(q, d), axis=1)
        return (off <= tol) & (q >= lo - tol) & (q <= hi + tol)
    hull = ConvexHull(uniq)
    A, b = hull.equations[:, :-1], hull.equations[:, -1]
    return np.all(P @ A.T + b <= tol, axis=1)


def boundedness_violations(support_history, X, Y, t, tol=1e-9):
    """Count iterates with ``(t y_j - z_j)/(t-1)`` outside conv(X)."""
    Y = np.asarray(Y, dtype=float)
    bad = 0
    for Z in support_history:
        pre = (t * Y - Z) / (t - 1.0)
        bad += int(np.sum(~in_hull_2d(X, pre, tol)))
    return bad


def polytope_vertices(a, b):
    """All vertices of G(a, b) by enumerating bases of size M+N-1."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    M, N = a.size, b.size
    cells = list(itertools.product(range(M), range(N)))
    A = np.zeros((M + N, M * N))
    for k, (i, j) in enumerate(cells):
        A[i, k] = 1.0
        A[M + j, k] = 1.0
    rhs = np.concatenate([a, b])
    out = []
    for basis in itertools.combinations(range(M * N), M + N - 1):
        sub = A[:, basis]
        if np.linalg.matrix_rank(sub) < M + N - 1:
            continue
        x, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.allclose(sub @ x, rhs, atol=1e-12) and np.all(x >= -1e-12):
            P = np.zeros(M * N)
            P[list(basis)] = np.maximum(x, 0.0)
            out.append(P.reshape(M, N))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
