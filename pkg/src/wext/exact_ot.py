"""Exact discrete optimal transport for the squared Euclidean cost.

General instances go through POT's network simplex, which returns a vertex
of the transportation polytope.  One-dimensional instances can also be
evaluated through quantile functions, which gives an independent route to
the same value.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InstanceTooLarge, NotOneDimensional
from .measures import AtomicMeasure, TransportPlan

# POT probes torch/jax/tensorflow at import time; only the numpy backend is used.
for _key in (
    "POT_BACKEND_DISABLE_PYTORCH",
    "POT_BACKEND_DISABLE_TENSORFLOW",
    "POT_BACKEND_DISABLE_JAX",
    "POT_BACKEND_DISABLE_CUPY",
):
    os.environ.setdefault(_key, "1")

import ot  # noqa: E402

DEFAULT_CAP = 250_000
_EMD_MAX_ITER = 10_000_000


def sq_dist(X, Y) -> np.ndarray:
    """Pairwise squared distances ``|x_i - y_j|^2``, clipped at zero."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    D = (
        np.einsum("ij,ij->i", X, X)[:, None]
        + np.einsum("ij,ij->i", Y, Y)[None, :]
        - 2.0 * X @ Y.T
    )
    return np.maximum(D, 0.0)


def solve_lp(cost, a, b, *, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Vertex minimizer of ``<cost, P>`` over ``G(a, b)``."""
    cost = np.ascontiguousarray(cost, dtype=float)
    if cost.size > cap:
        raise InstanceTooLarge(f"{cost.shape[0]}x{cost.shape[1]} exceeds cap of {cap} entries")
    return ot.emd(np.asarray(a, dtype=float), np.asarray(b, dtype=float), cost,
                  numItermax=_EMD_MAX_ITER)


def w2_sq_exact(mu: AtomicMeasure, nu: AtomicMeasure, *, cap: int = DEFAULT_CAP):
    """Squared 2-Wasserstein distance and an optimal vertex plan.

    Returns
    -------
    value : float
    plan : TransportPlan
        At most ``M + N - 1`` nonzero entries.
    """
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"dimensions differ: {mu.dim} vs {nu.dim}")
    C = sq_dist(mu.points, nu.points)
    P = solve_lp(C, mu.weights, nu.weights, cap=cap)
    value = max(float(np.sum(C * P)), 0.0)
    return value, TransportPlan(P, mu.weights, nu.weights)


def w2_exact(mu: AtomicMeasure, nu: AtomicMeasure, **kw) -> float:
    return float(np.sqrt(w2_sq_exact(mu, nu, **kw)[0]))


@dataclass(frozen=True, eq=False)
class QuantileFunction:
    """Left-continuous step function on (0, 1].

    ``values[k]`` is taken on ``(breakpoints[k-1], breakpoints[k]]`` with
    ``breakpoints[-1] == 1``.  ``order`` gives the index of the original atom
    behind each step.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    order: np.ndarray

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.breakpoints, s, side="left")
        return self.values[np.clip(idx, 0, self.values.size - 1)]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints, prepend=0.0)


def quantile(mu: AtomicMeasure) -> QuantileFunction:
    """Quantile function of a 1D atomic measure.

    Atoms are sorted stably, so ties keep their input order; atoms sharing a
    location are kept as separate steps.
    """
    if mu.dim != 1:
        raise NotOneDimensional(f"quantile needs a 1D measure, got dim={mu.dim}")
    order = np.argsort(mu.points[:, 0], kind="stable")
    bp = np.cumsum(mu.weights[order])
    bp[-1] = 1.0
    return QuantileFunction(bp, mu.points[order, 0].copy(), order)


def common_refinement(*qs: QuantileFunction):
    """Merge breakpoint grids.

    Returns ``(lengths, values)`` where ``values[k]`` holds, for each input,
    the step value on each segment of the merged grid.  Zero-length segments
    are dropped.
    """
    grid = np.unique(np.concatenate([q.breakpoints for q in qs]))
    lengths = np.diff(grid, prepend=0.0)
    keep = lengths > 0
    grid, lengths = grid[keep], lengths[keep]
    # any point strictly inside the segment identifies the step
    mid = grid - 0.5 * lengths
    return lengths, [q(mid) for q in qs], [np.searchsorted(q.breakpoints, mid) for q in qs]


def w2_sq_1d(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """``int_0^1 |F_mu^{-1} - F_nu^{-1}|^2`` on the common refinement."""
    qm, qn = quantile(mu), quantile(nu)
    lengths, (vm, vn), _ = common_refinement(qm, qn)
    return float(np.sum(lengths * (vm - vn) ** 2))


def w2_1d(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    return float(np.sqrt(w2_sq_1d(mu, nu)))


def w2(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """W2 distance, using the quantile formula when both measures are 1D."""
    if mu.dim == 1 and nu.dim == 1:
        return w2_1d(mu, nu)
    return w2_exact(mu, nu)
