"""Frank-Wolfe oracle for barycentric transport QPs.

Two problems share one form.  Over plans ``P`` in ``G(a, b)`` between source
points ``x_i`` (weights ``a``) and reference points ``u_j`` (weights ``b``),
minimize

    q(P) = c * sum_j b_j |u_j - s * bary_j(P)|^2,   bary_j(P) = sum_i x_i P_ij / b_j.

* The barycentric extrapolation objective ``g`` uses ``u_j = t y_j``,
  ``s = t - 1`` and ``c = 1/(2t(t-1))``.
* The convex-order test ``mu <=_C nu`` uses nu's atoms as sources, mu's atoms
  as references, ``s = 1``, ``c = 1``: the minimum is zero iff a martingale
  coupling exists.

The linear minimization oracle over ``G(a, b)`` is an exact OT problem.  The
default variant is Wolfe's min-norm-point method: since ``q = |image(P)|^2``
for an affine ``image``, Frank-Wolfe steps with fully corrective affine
minimizations over the active vertices terminate finitely.  Pairwise,
line-search and classic ``2/(k+2)`` steps are kept as options.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, InstanceTooLarge, NoConvergence
from .exact_ot import DEFAULT_CAP, solve_lp, w2_sq_1d, w2_sq_exact
from .measures import AtomicMeasure, TransportPlan, barycenter, check_plan

logger = logging.getLogger(__name__)

_FD_STEP = 1e-6
_FD_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FwReport:
    """Outcome of :func:`fw_solve`.

    ``gap`` bounds ``value - min``; ``history`` holds the value after every
    iteration.
    """

    plan: TransportPlan
    value: float
    gap: float
    iterations: int
    converged: bool
    history: np.ndarray

    def support(self, nu0: AtomicMeasure, nu1: AtomicMeasure, t: float) -> AtomicMeasure:
        """``z_j = t y_j - (t-1) bary_j(P)`` with the weights of ``nu1``."""
        Zs = t * nu1.points - (t - 1.0) * self.plan.bary(nu0.points)
        return AtomicMeasure(Zs, nu1.weights)


class _BaryQP:
    def __init__(self, Xs, a, U, b, s, c):
        self.X = np.asarray(Xs, dtype=float)
        self.a = np.asarray(a, dtype=float)
        self.U = np.asarray(U, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.s = float(s)
        self.c = float(c)

    def residual(self, P):
        return self.U - self.s * (P.T @ self.X) / self.b[:, None]

    def value(self, P) -> float:
        R = self.residual(P)
        return self.c * float(self.b @ np.einsum("ij,ij->i", R, R))

    def grad(self, P) -> np.ndarray:
        # d q / d P_ij = -2 c s <r_j, x_i>
        return -2.0 * self.c * self.s * (self.X @ self.residual(P).T)

    def image(self, P) -> np.ndarray:
        """Flattened ``sqrt(c b_j) r_j`` so that ``q(P) = |image(P)|^2``."""
        return (np.sqrt(self.c * self.b)[:, None] * self.residual(P)).ravel()

    def line_search(self, P, D, gmax: float) -> float:
        R = self.residual(P)
        delta = (D.T @ self.X) / self.b[:, None]
        den = self.s * float(self.b @ np.einsum("ij,ij->i", delta, delta))
        if den <= 0:
            return gmax
        num = float(self.b @ np.einsum("ij,ij->i", R, delta))
        return float(np.clip(num / den, 0.0, gmax))


def _check_gradient(qp: _BaryQP, rng) -> None:
    """Central differences of ``q`` against ``grad`` on a perturbed product plan."""
    M, N = qp.a.size, qp.b.size
    P = np.outer(qp.a, qp.b) * (1.0 + 0.1 * rng.random((M, N)))
    G = qp.grad(P)
    E = np.zeros_like(P)
    for _ in range(min(8, M * N)):
        i, j = rng.integers(M), rng.integers(N)
        E[i, j] = _FD_STEP
        fd = (qp.value(P + E) - qp.value(P - E)) / (2 * _FD_STEP)
        E[i, j] = 0.0
        scale = max(1.0, abs(G[i, j]))
        if abs(fd - G[i, j]) > _FD_TOL * scale:
            raise AssertionError(
                f"gradient check failed at ({i},{j}): analytic {G[i, j]:.9e} vs fd {fd:.9e}"
            )


def _vertex(qp: _BaryQP, G, cap) -> np.ndarray:
    S = solve_lp(G, qp.a, qp.b, cap=cap)
    S[S < 0] = 0.0
    return S


def _affine_min(A: np.ndarray) -> np.ndarray:
    """Weights ``alpha`` (summing to one) of the min-norm point of the affine hull of the rows of ``A``."""
    K = A.shape[0]
    B = np.zeros((K + 1, K + 1))
    B[:K, :K] = A @ A.T
    B[:K, K] = B[K, :K] = 1.0
    rhs = np.zeros(K + 1)
    rhs[K] = 1.0
    sol = np.linalg.lstsq(B, rhs, rcond=None)[0]
    alpha = sol[:K]
    return alpha / alpha.sum()


def _wolfe(qp: _BaryQP, P, max_iter, gap_tol, cap, stop_value):
    """Wolfe's min-norm-point method on the image of ``G(a, b)``.

    Each major step adds the LP vertex; minor steps move to the affine
    minimizer of the active set, dropping vertices whenever it leaves their
    convex hull.  Terminates finitely on polytopes.
    """
    verts = [P]
    pts = [qp.image(P)]
    lam = np.ones(1)
    x = pts[0]
    history = []
    gap = np.inf
    for k in range(max_iter):
        P = np.tensordot(lam, np.asarray(verts), axes=1)
        value = float(x @ x)
        S = _vertex(qp, qp.grad(P), cap)
        pS = qp.image(S)
        gap = max(2.0 * (value - float(x @ pS)), 0.0)
        if gap <= gap_tol:
            return P, value, gap, k, True, np.asarray(history)
        if stop_value is not None and (value <= stop_value or value - gap > stop_value):
            return P, value, gap, k, True, np.asarray(history)
        if any(np.array_equal(S, V) for V in verts):
            # no progress possible in floating point
            return P, value, gap, k, gap <= gap_tol, np.asarray(history)
        verts.append(S)
        pts.append(pS)
        lam = np.append(lam, 0.0)
        for _ in range(len(verts) + 1):
            A = np.asarray(pts)
            alpha = _affine_min(A)
            if np.all(alpha > 1e-14):
                lam = alpha
                break
            neg = alpha <= 1e-14
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg, lam / (lam - alpha), np.inf)
            theta = float(np.clip(np.min(ratios), 0.0, 1.0))
            lam = lam + theta * (alpha - lam)
            keep = lam > 1e-14
            if not np.any(keep):
                keep[np.argmax(lam)] = True
            verts = [V for V, kk in zip(verts, keep) if kk]
            pts = [p for p, kk in zip(pts, keep) if kk]
            lam = lam[keep] / lam[keep].sum()
        x = lam @ np.asarray(pts)
        history.append(float(x @ x))
    P = np.tensordot(lam, np.asarray(verts), axes=1)
    return P, float(x @ x), gap, max_iter, False, np.asarray(history)


def _fw_core(qp: _BaryQP, *, max_iter: int, gap_tol: float, step: str, cap: int,
             init: Optional[np.ndarray] = None, stop_value: Optional[float] = None,
             check_grad: bool = True):
    """Returns ``(P, value, gap, iterations, converged, history)``.

    With ``stop_value`` set, also stops once ``value <= stop_value`` or
    ``value - gap > stop_value`` (decision mode for the convex-order test).
    """
    if qp.a.size * qp.b.size > cap:
        raise InstanceTooLarge(f"{qp.a.size}x{qp.b.size} exceeds cap of {cap} entries")
    if step not in ("wolfe", "pairwise", "line_search", "classic"):
        raise ValueError(f"unknown step rule {step!r}")
    if check_grad:
        _check_gradient(qp, np.random.default_rng(0))
    # start at a vertex so the active set is exact from the beginning
    P0 = np.outer(qp.a, qp.b) if init is None else np.asarray(init, dtype=float)
    P = _vertex(qp, qp.grad(P0), cap)
    if step == "wolfe":
        return _wolfe(qp, P, max_iter, gap_tol, cap, stop_value)
    vertices = [P.copy()]
    lam = [1.0]
    history = []
    value = qp.value(P)
    gap = np.inf
    for k in range(max_iter):
        G = qp.grad(P)
        S = _vertex(qp, G, cap)
        gap = max(float(np.sum(G * (P - S))), 0.0)
        if gap <= gap_tol:
            return P, value, gap, k, True, np.asarray(history)
        if stop_value is not None and (value <= stop_value or value - gap > stop_value):
            return P, value, gap, k, True, np.asarray(history)
        if step == "classic":
            gamma = 2.0 / (k + 2.0)
            P = (1.0 - gamma) * P + gamma * S
        elif step == "line_search":
            gamma = qp.line_search(P, S - P, 1.0)
            P = P + gamma * (S - P)
        else:
            scores = [float(np.sum(G * V)) for V in vertices]
            away = int(np.argmax(scores))
            D = S - vertices[away]
            gamma = qp.line_search(P, D, lam[away])
            P = P + gamma * D
            lam[away] -= gamma
            for idx, V in enumerate(vertices):
                if np.array_equal(V, S):
                    lam[idx] += gamma
                    break
            else:
                vertices.append(S)
                lam.append(gamma)
            keep = [i for i, w in enumerate(lam) if w > 1e-15]
            if len(keep) < len(lam):
                vertices = [vertices[i] for i in keep]
                lam = [lam[i] for i in keep]
                P = sum(w * V for w, V in zip(lam, vertices))
        np.maximum(P, 0.0, out=P)
        value = qp.value(P)
        history.append(value)
    return P, value, gap, max_iter, False, np.asarray(history)


def extrapolation_qp(nu0: AtomicMeasure, nu1: AtomicMeasure, t: float) -> _BaryQP:
    """The barycentric objective ``g`` as a :class:`_BaryQP`."""
    return _BaryQP(nu0.points, nu0.weights, t * nu1.points, nu1.weights,
                   t - 1.0, 1.0 / (2.0 * t * (t - 1.0)))


def fw_solve(
    nu0: AtomicMeasure,
    nu1: AtomicMeasure,
    t: float,
    max_iter: int = 100_000,
    gap_tol: float = 1e-10,
    *,
    step: str = "wolfe",
    cap: int = DEFAULT_CAP,
    raise_on_failure: bool = False,
) -> FwReport:
    """Minimize ``g(P) = sum_j b_j |t y_j - (t-1) bary_j(P)|^2 / (2t(t-1))`` over ``G(a, b)``.

    Parameters
    ----------
    step : {"wolfe", "pairwise", "line_search", "classic"}
        ``"wolfe"`` is the fully corrective min-norm-point variant and reaches
        gaps near machine precision.  The others are pairwise (away-step)
        directions with exact line search, plain Frank-Wolfe with exact line
        search, and the schedule ``gamma_k = 2/(k+2)``.
    raise_on_failure : bool
        Raise :class:`NoConvergence` instead of returning an unconverged report.

    Notes
    -----
    The gradient is checked against central differences before the first
    iteration.  Since ``g`` is a convex quadratic, ``g(P) - min g <= gap``.
    """
    if nu0.dim != nu1.dim:
        raise DimensionMismatch(f"nu0 has dim {nu0.dim}, nu1 has dim {nu1.dim}")
    if not t > 1:
        raise ValueError(f"t must exceed 1, got {t}")
    qp = extrapolation_qp(nu0, nu1, t)
    P, value, gap, iters, ok, hist = _fw_core(qp, max_iter=max_iter, gap_tol=gap_tol,
                                              step=step, cap=cap)
    rep = FwReport(TransportPlan(P, nu0.weights, nu1.weights), value, gap, iters, ok, hist)
    if not ok:
        msg = f"Frank-Wolfe gap {gap:.3e} above {gap_tol:.1e} after {max_iter} iterations"
        if raise_on_failure:
            raise NoConvergence(msg, result=rep)
        logger.warning(msg)
    return rep


def convex_order_value(mu: AtomicMeasure, nu: AtomicMeasure, *, tol: float = 1e-8,
                       max_iter: int = 20_000, cap: int = DEFAULT_CAP):
    """``(value, gap)`` of ``min_theta sum_x mu_x |bary_x(theta) - x|^2``.

    Iterates until the value is certified on one side of ``tol``.
    """
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"mu has dim {mu.dim}, nu has dim {nu.dim}")
    qp = _BaryQP(nu.points, nu.weights, mu.points, mu.weights, 1.0, 1.0)
    _, value, gap, _, _, _ = _fw_core(qp, max_iter=max_iter, gap_tol=0.0, step="wolfe",
                                      cap=cap, stop_value=tol)
    return value, gap


def check_convex_order(mu: AtomicMeasure, nu: AtomicMeasure, tol: float = 1e-8, **kw) -> bool:
    """True iff ``mu <=_C nu``, i.e. some coupling of ``(mu, nu)`` is a martingale.

    Decided by the minimal squared barycentric deviation being at most
    ``tol``.  Measures with different means are rejected immediately.
    """
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"mu has dim {mu.dim}, nu has dim {nu.dim}")
    shift = barycenter(mu) - barycenter(nu)
    if float(shift @ shift) > tol:
        return False
    value, _ = convex_order_value(mu, nu, tol=tol, **kw)
    return bool(value <= tol)


@dataclass(frozen=True)
class Certificate:
    """Independent checks of an extrapolation result.

    ``value_mismatch`` compares the plan's ``g`` with the Frank-Wolfe optimum;
    ``convex_order`` is the verdict ``nu0_bar <=_C nu0`` for
    ``nu0_bar = sum_j b_j delta_{bary_j(P)}``; ``eqbp_residual`` is the gap in
    the identity between the extrapolation objective and ``-g`` plus moments.
    """

    value_mismatch: float
    fw_value: float
    fw_gap: float
    convex_order: bool
    convex_order_value: float
    eqbp_residual: float
    value_tol: float
    gap_tol: float

    @property
    def passed(self) -> bool:
        return (self.value_mismatch <= self.value_tol and self.fw_gap <= self.gap_tol
                and self.convex_order and self.eqbp_residual <= self.value_tol)

    def to_dict(self) -> dict:
        return {
            "value_mismatch": self.value_mismatch,
            "fw_value": self.fw_value,
            "fw_gap": self.fw_gap,
            "convex_order": self.convex_order,
            "convex_order_value": self.convex_order_value,
            "eqbp_residual": self.eqbp_residual,
            "value_tol": self.value_tol,
            "gap_tol": self.gap_tol,
            "passed": self.passed,
        }


def certify(plan: TransportPlan, nu_t: AtomicMeasure, nu0: AtomicMeasure, nu1: AtomicMeasure,
            t: float, epsilon: float, *, plan_tol: float = 1e-6, gap_tol: float = 1e-6,
            fw_max_iter: int = 100_000, cap: int = DEFAULT_CAP) -> Certificate:
    """Certificate for a plan/support pair; see :func:`certify_solution`.

    Raises :class:`InvalidPlan` if the plan's marginals are off by more than
    ``plan_tol``.
    """
    from .sinkhorn import moment_constant, primal_g

    check_plan(plan, tol=plan_tol)
    g_val = primal_g(plan, nu0.points, nu1.points, nu1.weights, t)
    fw = fw_solve(nu0, nu1, t, fw_max_iter, min(gap_tol, 1e-10), cap=cap)
    nu0_bar = AtomicMeasure(plan.bary(nu0.points), nu1.weights)
    co_value, _ = convex_order_value(nu0_bar, nu0, cap=cap)
    if nu_t.dim == 1:
        d1, d0 = w2_sq_1d(nu_t, nu1), w2_sq_1d(nu_t, nu0)
    else:
        d1, d0 = w2_sq_exact(nu_t, nu1, cap=cap)[0], w2_sq_exact(nu_t, nu0, cap=cap)[0]
    p_val = d1 / (2.0 * (t - 1.0)) - d0 / (2.0 * t)
    eqbp = abs(p_val - (-g_val + moment_constant(nu0, nu1, t)))
    return Certificate(
        value_mismatch=abs(g_val - fw.value), fw_value=fw.value, fw_gap=fw.gap,
        convex_order=bool(co_value <= 1e-8), convex_order_value=co_value,
        eqbp_residual=eqbp, value_tol=max(1e-3, 5.0 * epsilon), gap_tol=gap_tol,
    )


def certify_solution(result, nu0: AtomicMeasure, nu1: AtomicMeasure, t: float,
                     **kw) -> Certificate:
    """Check a solver result against the Frank-Wolfe oracle and convex order.

    Reports (a) ``|primal_g - fw value|``, (b) whether
    ``sum_j b_j delta_{bary_j(P)} <=_C nu0`` and (c) the residual of the value
    identity, each with the thresholds ``max(1e-3, 5 eps)`` and gap ``1e-6``.
    """
    eps = result.config.schedule()[-1]
    return certify(result.plan, result.nu_t, nu0, nu1, t, eps, **kw)


__all__ = [
    "FwReport", "fw_solve", "check_convex_order", "convex_order_value",
    "Certificate", "certify", "certify_solution", "extrapolation_qp",
]
