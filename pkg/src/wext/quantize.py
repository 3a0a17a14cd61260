"""W2 quantization of sampled densities.

An optimal k-point quantization of the empirical measure of samples, in the
W2 sense with uniform weights, is approximated by Lloyd's algorithm
(centroids of the Voronoi cells).  Synthetic 2D shapes stand in for scanned
glyphs.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.cluster import KMeans
from threadpoolctl import threadpool_limits

from .errors import DimensionMismatch, EmptyInput, TooFewSamples
from .measures import AtomicMeasure

LLOYD_MAX_ITER = 100


def _in_square(p):
    return np.all(np.abs(p) <= 0.5, axis=1)


def _in_disk(p):
    return np.einsum("ij,ij->i", p, p) <= 0.25


def _in_annulus(p):
    r2 = np.einsum("ij,ij->i", p, p)
    return (r2 <= 0.25) & (r2 >= 0.0625)


def _in_cross(p):
    ax, ay = np.abs(p[:, 0]), np.abs(p[:, 1])
    return ((ax <= 0.5) & (ay <= 1 / 6)) | ((ay <= 0.5) & (ax <= 1 / 6))


def _in_ell(p):
    x, y = p[:, 0] + 0.5, p[:, 1] + 0.5
    box = (x >= 0) & (x <= 1) & (y >= 0) & (y <= 1)
    return box & ((x <= 1 / 3) | (y <= 1 / 3))


def _in_triangle(p):
    # equilateral, centered, side 1
    h = np.sqrt(3) / 2
    x, y = p[:, 0], p[:, 1] + h / 3
    return (y >= 0) & (y <= np.sqrt(3) * (x + 0.5)) & (y <= np.sqrt(3) * (0.5 - x))


SHAPES = {
    "square": _in_square,
    "disk": _in_disk,
    "annulus": _in_annulus,
    "cross": _in_cross,
    "ell": _in_ell,
    "triangle": _in_triangle,
}


def sample_shape(name: str, n: int, *, seed: int = 0, center=(0.0, 0.0)) -> np.ndarray:
    """``n`` uniform samples from a named shape inside ``[-0.5, 0.5]^2`` plus ``center``.

    Rejection sampling from the bounding square.
    """
    if name not in SHAPES:
        raise ValueError(f"unknown shape {name!r}; choose from {sorted(SHAPES)}")
    if n < 1:
        raise EmptyInput("need at least one sample")
    rng = np.random.default_rng(seed)
    inside = SHAPES[name]
    out = []
    got = 0
    while got < n:
        batch = rng.uniform(-0.5, 0.5, size=(2 * n + 16, 2))
        batch = batch[inside(batch)]
        out.append(batch)
        got += batch.shape[0]
    return np.concatenate(out)[:n] + np.asarray(center, dtype=float)


def lloyd_quantize(samples, k: int, *, seed: int = 0, max_iter: int = LLOYD_MAX_ITER,
                   threads: int | None = None) -> AtomicMeasure:
    """``k`` uniform-weight atoms at the Lloyd centroids of ``samples``.

    Parameters
    ----------
    samples : array-like, shape (n, d)
    k : int
        ``1 <= k <= n``.
    seed : int
        Seeds the k-means++ initialization.
    threads : int, optional
        Cap on BLAS/OpenMP threads.

    Notes
    -----
    Iterations stop after ``max_iter`` rounds or when no assignment changes,
    at which point the centroids no longer move.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInput("no samples to quantize")
    if not np.all(np.isfinite(X)):
        raise DimensionMismatch("samples contain non-finite coordinates")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise TooFewSamples(f"k={k} must lie in [1, {n}]")
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=max_iter, tol=0.0,
                algorithm="lloyd", random_state=seed)
    with threadpool_limits(limits=threads):
        km.fit(X)
    return AtomicMeasure(km.cluster_centers_, np.full(k, 1.0 / k))


def load_samples_csv(path) -> np.ndarray:
    """Samples from a CSV file, one point per row; a non-numeric header row is skipped."""
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.strip().split(",") if v.strip()]
        skip = 0
    except ValueError:
        skip = 1
    with warnings.catch_warnings():
        # an empty file is reported below as EmptyInput
        warnings.simplefilter("ignore", UserWarning)
        data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if data.size == 0:
        raise EmptyInput(f"{path} holds no samples")
    return data
