"""Atomic probability measures and discrete couplings.

An :class:`AtomicMeasure` is a weighted point cloud ``sum_i a_i delta_{x_i}``
and a :class:`TransportPlan` is a nonnegative ``M x N`` matrix coupling two
of them.  Both are immutable: arrays are copied on construction and flagged
read-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from os import PathLike
from typing import Any, Mapping

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidPlan,
    NonFiniteCoordinate,
    NonPositiveWeight,
    WeightSumMismatch,
)

WEIGHT_SUM_TOL = 1e-12


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def validate(points, weights) -> None:
    """Raise if ``(points, weights)`` does not describe a probability measure.

    Checks, in order: every point has the same length, all coordinates are
    finite, all weights are strictly positive, and the weights sum to one
    within ``WEIGHT_SUM_TOL``.  Inputs are never renormalized.
    """
    try:
        pts = np.asarray(points, dtype=float)
    except ValueError as exc:  # ragged nested lists
        raise DimensionMismatch(f"points are not a rectangular array: {exc}") from None
    w = np.asarray(weights, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
        raise DimensionMismatch(f"points must have shape (M, d) with M, d >= 1, got {pts.shape}")
    if w.ndim != 1 or w.shape[0] != pts.shape[0]:
        raise DimensionMismatch(
            f"expected {pts.shape[0]} weights, got array of shape {w.shape}"
        )
    if not np.all(np.isfinite(pts)):
        raise NonFiniteCoordinate("points contain NaN or infinite coordinates")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        bad = int(np.flatnonzero(~(w > 0))[0]) if np.any(~(w > 0)) else -1
        raise NonPositiveWeight(f"weights must be strictly positive (index {bad})")
    total = float(np.sum(w))
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise WeightSumMismatch(f"weights sum to {total!r}, expected 1")


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Probability measure ``sum_i weights[i] * delta_{points[i]}``.

    Parameters
    ----------
    points : array-like, shape (M, d)
        Atom locations.  A 1D sequence of scalars is read as ``d = 1``.
    weights : array-like, shape (M,), optional
        Strictly positive masses summing to one.  Uniform if omitted.
    """

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points, weights=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if weights is None:
            n = pts.shape[0] if pts.ndim >= 1 else 0
            weights = np.full(n, 1.0 / n) if n else np.zeros(0)
        validate(pts, weights)
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(weights))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"AtomicMeasure(size={self.size}, dim={self.dim})"

    def shifted(self, v) -> "AtomicMeasure":
        """Translate every atom by the vector ``v``."""
        return AtomicMeasure(self.points + np.asarray(v, dtype=float), self.weights)

    # JSON --------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AtomicMeasure":
        if "points" not in data:
            raise DimensionMismatch("measure JSON lacks a 'points' field")
        points = np.asarray(data["points"], dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if "dim" in data and points.ndim == 2 and points.shape[1] != int(data["dim"]):
            raise DimensionMismatch(
                f"declared dim {data['dim']} but points have length {points.shape[1]}"
            )
        return cls(points, data.get("weights"))

    def save(self, path: str | PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str | PathLike) -> "AtomicMeasure":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def dirac(x) -> AtomicMeasure:
    """Unit mass at ``x``."""
    return AtomicMeasure(np.atleast_1d(np.asarray(x, dtype=float))[None, :], [1.0])


def barycenter(m: AtomicMeasure) -> np.ndarray:
    """Mean ``sum_i a_i x_i`` of the measure."""
    return m.weights @ m.points


def second_moment(m: AtomicMeasure) -> float:
    """``sum_i a_i |x_i|^2``."""
    return float(m.weights @ np.einsum("ij,ij->i", m.points, m.points))


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Nonnegative coupling matrix with its intended marginals.

    Construction only checks shape and sign; use :meth:`residuals` or
    :func:`check_plan` to test the marginal constraints.
    """

    entries: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __init__(self, entries, row_marginal, col_marginal):
        P = np.asarray(entries, dtype=float)
        a = np.asarray(row_marginal, dtype=float)
        b = np.asarray(col_marginal, dtype=float)
        if P.ndim != 2 or P.shape != (a.size, b.size):
            raise InvalidPlan(f"plan shape {P.shape} does not match marginals ({a.size}, {b.size})")
        if not np.all(np.isfinite(P)):
            raise InvalidPlan("plan has non-finite entries")
        if np.any(P < 0):
            raise InvalidPlan(f"plan has negative entries (min {P.min():.3e})")
        object.__setattr__(self, "entries", _frozen(P))
        object.__setattr__(self, "row_marginal", _frozen(a))
        object.__setattr__(self, "col_marginal", _frozen(b))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def residuals(self) -> tuple[float, float]:
        """Max absolute row and column marginal errors."""
        row = np.max(np.abs(self.entries.sum(axis=1) - self.row_marginal))
        col = np.max(np.abs(self.entries.sum(axis=0) - self.col_marginal))
        return float(row), float(col)

    def bary(self, X) -> np.ndarray:
        """Conditional barycenters ``bary_j = sum_i x_i P_ij / b_j``, shape (N, d)."""
        return (self.entries.T @ np.asarray(X, dtype=float)) / self.col_marginal[:, None]

    def nnz(self, tol: float = 0.0) -> int:
        return int(np.count_nonzero(self.entries > tol))


def check_plan(plan: TransportPlan, tol: float = 1e-9) -> None:
    """Raise :class:`InvalidPlan` if either marginal is off by more than ``tol``."""
    row, col = plan.residuals()
    if row > tol or col > tol:
        raise InvalidPlan(f"marginal residuals row={row:.3e}, col={col:.3e} exceed {tol:.1e}")


def product_plan(a_meas: AtomicMeasure, b_meas: AtomicMeasure) -> TransportPlan:
    """Independent coupling ``P_ij = a_i b_j``."""
    return TransportPlan(
        np.outer(a_meas.weights, b_meas.weights), a_meas.weights, b_meas.weights
    )
