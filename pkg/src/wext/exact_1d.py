"""Exact metric extrapolation on the real line.

In one dimension the extrapolated measure has quantile function equal to the
L2 projection of ``t F1^{-1} - (t-1) F0^{-1}`` onto nondecreasing functions.
Both quantile functions are step functions, so on their common refinement the
projection is a weighted isotonic regression with segment lengths as weights.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.optimize import isotonic_regression

from .errors import DimensionMismatch, NotOneDimensional
from .exact_ot import common_refinement, quantile
from .measures import AtomicMeasure

MERGE_TOL = 1e-12


def pav_isotonic(values, weights) -> np.ndarray:
    """Weighted projection onto nondecreasing sequences.

    Minimizes ``sum_k w_k (out_k - values_k)^2`` subject to
    ``out_0 <= out_1 <= ...``.  Pooled blocks take the weighted mean of
    their values.

    Parameters
    ----------
    values : array-like, shape (n,)
    weights : array-like, shape (n,)
        Strictly positive.
    """
    y = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if y.shape != w.shape or y.ndim != 1:
        raise DimensionMismatch(f"values {y.shape} and weights {w.shape} must be equal-length vectors")
    if y.size == 0:
        return y.copy()
    if np.any(w <= 0):
        raise ValueError("isotonic weights must be strictly positive")
    return np.asarray(isotonic_regression(y, weights=w, increasing=True).x, dtype=float)


def _check_1d(*ms: AtomicMeasure) -> None:
    for m in ms:
        if m.dim != 1:
            raise NotOneDimensional(f"expected a 1D measure, got dim={m.dim}")


def _projected_steps(nu0: AtomicMeasure, nu1: AtomicMeasure, t: float):
    if not t > 1:
        raise ValueError(f"t must exceed 1, got {t}")
    _check_1d(nu0, nu1)
    q0, q1 = quantile(nu0), quantile(nu1)
    lengths, (v0, v1), (_, k1) = common_refinement(q0, q1)
    target = t * v1 - (t - 1.0) * v0
    return lengths, pav_isotonic(target, lengths), q1, k1


def extrapolate_1d(nu0: AtomicMeasure, nu1: AtomicMeasure, t: float) -> AtomicMeasure:
    """Exact extrapolation at time ``t > 1`` of two 1D measures.

    Adjacent segments of the projected quantile function whose values agree
    within ``MERGE_TOL`` become one atom carrying their total length.
    """
    lengths, proj, _, _ = _projected_steps(nu0, nu1, t)
    starts = np.concatenate(([0], np.flatnonzero(np.abs(np.diff(proj)) > MERGE_TOL) + 1))
    masses = np.add.reduceat(lengths, starts)
    # mass-weighted location of each merged run (they agree to MERGE_TOL anyway)
    locs = np.add.reduceat(lengths * proj, starts) / masses
    masses = masses / masses.sum()
    return AtomicMeasure(locs[:, None], masses)


def extrapolate_1d_support(nu0: AtomicMeasure, nu1: AtomicMeasure, t: float) -> np.ndarray:
    """Extrapolated position of every atom of ``nu1``, shape (N, 1).

    The target ``t y_j - (t-1) F0^{-1}`` is nonincreasing on the quantile
    interval of each atom ``y_j``, so the projection is constant there and
    ``sum_j b_j delta_{z_j}`` equals :func:`extrapolate_1d` as a measure
    while keeping the weights and indexing of ``nu1``.
    """
    lengths, proj, q1, k1 = _projected_steps(nu0, nu1, t)
    z = np.empty(nu1.size)
    # mean over the segments of each step; they coincide up to rounding
    sums = np.bincount(k1, weights=lengths * proj, minlength=q1.values.size)
    mass = np.bincount(k1, weights=lengths, minlength=q1.values.size)
    z[q1.order] = sums / mass
    return z[:, None]


def sticky_flow_1d(nu0: AtomicMeasure, nu1: AtomicMeasure,
                   times: Sequence[float]) -> list[AtomicMeasure]:
    """:func:`extrapolate_1d` at each time, each computed from ``(nu0, nu1)``.

    These are the positions of sticky particles launched from ``nu0`` through
    ``nu1``; colliding masses move together afterwards.
    """
    times = [float(s) for s in times]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    return [extrapolate_1d(nu0, nu1, s) for s in times]
