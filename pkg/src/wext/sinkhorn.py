"""Entropic metric extrapolation between atomic measures.

Solves the unconstrained dual

    f(phi, psi, Z) = eps * sum_ij a_i b_j [exp((-C_ij(Z) + phi_i + psi_j)/eps)
                                           - (phi_i + psi_j)/eps]
                     + 1/(2(t-1)) * sum_j |z_j - y_j|^2 b_j,
    C_ij(Z) = |z_j - x_i|^2 / (2t),

by two exact Sinkhorn half-steps on the potentials followed by one gradient
step on the support points ``Z``.  At the optimum ``sum_j b_j delta_{z_j}``
is the entropic extrapolation of the geodesic from ``nu0`` through ``nu1``
to time ``t``.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from array import array
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .errors import DimensionMismatch, NonFiniteIntermediate, StepTooLarge
from .exact_ot import DEFAULT_CAP, sq_dist, w2_sq_1d, w2_sq_exact
from .measures import AtomicMeasure, TransportPlan, barycenter, second_moment

logger = logging.getLogger(__name__)

_ARMIJO_GROW = 1.25
_ARMIJO_SHRINK = 0.5
_ARMIJO_MAX_BACKTRACK = 60


@dataclass(frozen=True, eq=False)
class DualState:
    """Potentials ``phi`` (M,), ``psi`` (N,) and support points ``Z`` (N, d).

    ``phi[-1]`` is the gauge entry and stays at zero.
    """

    phi: np.ndarray
    psi: np.ndarray
    Z: np.ndarray

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.phi))
            and np.all(np.isfinite(self.psi))
            and np.all(np.isfinite(self.Z))
        )


@dataclass(frozen=True)
class SolverConfig:
    """Controls for :func:`solve`.

    Attributes
    ----------
    t : float
        Extrapolation time, ``t > 1``.
    epsilon : float
        Entropic regularization.  With ``anneal`` set this is the starting
        value of the schedule.
    tau : float or {"adaptive", "theory"}
        Step on ``Z``.  ``"theory"`` uses ``step_size_K(t, |b|_inf, D) * eps``;
        ``"adaptive"`` backtracks from the boundedness cap
        ``t(t-1)/|b|_inf`` until the sufficient-decrease condition holds.
        A number is used as is, clamped to the cap with a warning.
    max_iter : int
        Iteration budget per epsilon phase.
    tol : float
        Stop when ``max(row residual, tau * |grad_Z|) <= tol``.
    anneal : (factor, floor) or None
        Geometric schedule ``eps <- max(factor * eps, floor)`` ending at
        ``floor``, warm-starting every phase.
    log_domain : bool
        Evaluate exponentials through shifted log-sum-exp.
    """

    t: float
    epsilon: float = 1e-2
    tau: Union[float, str] = "adaptive"
    max_iter: int = 50_000
    tol: float = 1e-7
    anneal: Optional[tuple] = None
    log_domain: bool = True

    def __post_init__(self):
        if not self.t > 1:
            raise ValueError(f"t must exceed 1, got {self.t}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if isinstance(self.tau, str):
            if self.tau not in ("adaptive", "theory"):
                raise ValueError(f"unknown tau mode {self.tau!r}")
        elif not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.max_iter < 1 or not self.tol > 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")
        if self.anneal is not None:
            factor, floor = self.anneal
            if not (0 < factor < 1) or not floor > 0:
                raise ValueError(f"anneal needs factor in (0,1) and floor > 0, got {self.anneal}")

    def schedule(self) -> list[float]:
        """Epsilon values of the successive phases."""
        if self.anneal is None:
            return [self.epsilon]
        factor, floor = self.anneal
        eps = [self.epsilon]
        while eps[-1] > floor * (1 + 1e-12):
            eps.append(max(eps[-1] * factor, floor))
        return eps


@dataclass
class ConvergenceTrace:
    """Per-iteration log of a solve.

    ``f`` is the dual value after the Z step; ``f_phi`` and ``f_psi`` are the
    values after the two potential updates of the same iteration, so the
    sequence ``f[n-1] >= f_phi[n] >= f_psi[n] >= f[n]`` can be checked.
    ``f_start[k]`` is the value at the start of phase ``k``.  ``support``
    holds ``Z`` after every iteration when requested.  Per-iteration series
    are typed arrays, so long runs stay compact.
    """

    f: array = field(default_factory=lambda: array("d"))
    f_phi: array = field(default_factory=lambda: array("d"))
    f_psi: array = field(default_factory=lambda: array("d"))
    marginal_residual: array = field(default_factory=lambda: array("d"))
    z_grad_norm: array = field(default_factory=lambda: array("d"))
    epsilon: array = field(default_factory=lambda: array("d"))
    tau: array = field(default_factory=lambda: array("d"))
    phase: array = field(default_factory=lambda: array("q"))
    f_start: list = field(default_factory=list)
    support: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.f)

    def append(self, **row) -> None:
        for key, value in row.items():
            getattr(self, key).append(value)

    def as_arrays(self) -> dict:
        keys = ("f", "f_phi", "f_psi", "marginal_residual", "z_grad_norm", "epsilon", "tau", "phase")
        return {k: np.asarray(getattr(self, k)) for k in keys}

    def max_increase(self) -> float:
        """Largest increase of f between consecutive sub-steps within a phase."""
        worst = -np.inf
        prev = None
        for k in range(len(self.f)):
            if k == 0 or self.phase[k] != self.phase[k - 1]:
                prev = self.f_start[self.phase[k]]
            seq = (prev, self.f_phi[k], self.f_psi[k], self.f[k])
            worst = max(worst, max(seq[i + 1] - seq[i] for i in range(3)))
            prev = self.f[k]
        return float(worst)


@dataclass(frozen=True, eq=False)
class ExtrapolationResult:
    nu_t: AtomicMeasure
    plan: TransportPlan
    state: DualState
    dual_value: float
    primal_g: float
    p_value: float
    eqbp_residual: float
    converged: bool
    iterations: int
    trace: ConvergenceTrace
    config: SolverConfig

    def summary(self) -> dict:
        return {
            "p_value": self.p_value,
            "primal_g": self.primal_g,
            "eqbp_residual": self.eqbp_residual,
            "converged": self.converged,
            "iterations": self.iterations,
            "dual_value": self.dual_value,
        }


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def _lse(S: np.ndarray, axis: int) -> np.ndarray:
    m = S.max(axis=axis, keepdims=True)
    out = np.log(np.exp(S - m).sum(axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteIntermediate(
            f"{what} is not finite; epsilon is too small for naive mode (enable log_domain)"
        )
    return arr


def cost_matrix(Z, X, t: float) -> np.ndarray:
    """``C_ij = |z_j - x_i|^2 / (2t)``, shape (M, N)."""
    return sq_dist(X, Z) / (2.0 * t)


def _row_lse(psi, C, log_b, eps, log_domain):
    """``log sum_j b_j exp((psi_j - C_ij)/eps)`` for each row."""
    if log_domain:
        return _lse(log_b[None, :] + (psi[None, :] - C) / eps, axis=1)
    with np.errstate(all="ignore"):
        s = (np.exp(-C / eps) * (np.exp(log_b + psi / eps))[None, :]).sum(axis=1)
        out = np.log(s)
    if np.any(s == 0):
        out = np.full_like(s, -np.inf)
    return _check_finite(out, "row sum")


def _col_lse(phi, C, log_a, eps, log_domain):
    if log_domain:
        return _lse(log_a[:, None] + (phi[:, None] - C) / eps, axis=0)
    with np.errstate(all="ignore"):
        s = (np.exp(-C / eps) * (np.exp(log_a + phi / eps))[:, None]).sum(axis=0)
        out = np.log(s)
    if np.any(s == 0):
        out = np.full_like(s, -np.inf)
    return _check_finite(out, "column sum")


def phi_update(state: DualState, C, b, eps: float, log_domain: bool = True) -> np.ndarray:
    """Exact minimization in ``phi`` with the gauge ``phi[-1] = 0``."""
    phi = -eps * _row_lse(state.psi, C, np.log(b), eps, log_domain)
    phi[-1] = 0.0
    return phi


def psi_update(state: DualState, C, a, eps: float, log_domain: bool = True) -> np.ndarray:
    """Exact minimization in ``psi``; afterwards every column of the plan sums to ``b_j``."""
    return -eps * _col_lse(state.phi, C, np.log(a), eps, log_domain)


def _log_plan(phi, psi, C, log_a, log_b, eps):
    return log_a[:, None] + log_b[None, :] + (phi[:, None] + psi[None, :] - C) / eps


def plan_from_duals(state: DualState, C, a, b, eps: float) -> TransportPlan:
    """``P_ij = a_i b_j exp((-C_ij + phi_i + psi_j)/eps)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    P = np.exp(_log_plan(state.phi, state.psi, C, np.log(a), np.log(b), eps))
    return TransportPlan(P, a, b)


def _z_grad(Z, P, X, Y, b, t):
    col = P.sum(axis=0)
    return (Z - Y) * (b / (t - 1.0))[:, None] - (Z * col[:, None] - P.T @ X) / t


def z_gradient(state: DualState, P: TransportPlan, X, Y, t: float) -> np.ndarray:
    """Gradient of ``f`` in ``Z`` with the potentials held fixed, shape (N, d).

    ``g_j = b_j (z_j - y_j)/(t-1) - sum_i P_ij (z_j - x_i)/t``.
    """
    return _z_grad(
        np.asarray(state.Z, dtype=float), P.entries, np.asarray(X, dtype=float),
        np.asarray(Y, dtype=float), P.col_marginal, t,
    )


def step_cap(t: float, b_max: float) -> float:
    """Largest step keeping ``z_j`` inside ``t y_j - (t-1) conv(X)``."""
    return t * (t - 1.0) / b_max


def z_step(state: DualState, gradient, tau: float, *, t: float, b_max: float) -> np.ndarray:
    """``Z - tau * gradient``; refuses steps above :func:`step_cap`."""
    cap = step_cap(t, b_max)
    if tau > cap * (1 + 1e-12):
        raise StepTooLarge(f"tau={tau:.3e} exceeds t(t-1)/|b|_inf = {cap:.3e}")
    return np.asarray(state.Z, dtype=float) - tau * np.asarray(gradient, dtype=float)


def step_size_K(t: float, b_max: float, D: float, *, xtol: float = 1e-12) -> float:
    """Constant ``K`` such that ``tau <= K eps`` guarantees monotone descent.

    ``K = min(t(t-1)/b_max, Kbar)`` where ``Kbar`` is the root of
    ``K exp(K) + K/(t-1) = 1 / ((A + B) b_max)`` with
    ``A = exp(2 D^2 b_max)/t`` and ``B = exp(2 D^2 b_max) D^2``.
    """
    if not (t > 1 and 0 < b_max <= 1 and D > 0):
        raise ValueError(f"need t > 1, b_max in (0, 1], D > 0; got {t}, {b_max}, {D}")
    E = math.exp(2.0 * D * D * b_max)
    A = E / t
    B = E * D * D
    rhs = 1.0 / ((A + B) * b_max)

    def h(K):
        return K * math.exp(K) + K / (t - 1.0) - rhs

    lo, hi = 0.0, rhs  # h(0) < 0 <= h(rhs) since K exp(K) >= K
    while hi - lo > xtol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if h(mid) < 0:
            lo = mid
        else:
            hi = mid
    return min(t * (t - 1.0) / b_max, 0.5 * (lo + hi))


def dual_objective(state: DualState, a, b, X, Y, eps: float, t: float) -> float:
    """Value of ``f(phi, psi, Z)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = cost_matrix(state.Z, X, t)
    return _dual_value(state.phi, state.psi, state.Z, C, np.log(a), np.log(b), a, b,
                       np.asarray(Y, dtype=float), eps, t)


def _quad(Z, Y, b, t):
    d = Z - Y
    return float(b @ np.einsum("ij,ij->i", d, d)) / (2.0 * (t - 1.0))


def _z_step_change(X, Y, b, P, Z, dZ, Z_new, inv, t):
    """``f(Z_new) - f(Z)`` at fixed potentials, plus the scale of its rounding error.

    ``P`` is the plan at ``Z``.  The entropic part is
    ``eps sum_ij P_ij expm1(-dC_ij/eps)`` and the quadratic parts are factored,
    so the change stays accurate far below ``eps |f|``.
    """
    dcz = np.einsum("ij,ij->i", dZ, Z_new + Z) / (2.0 * t)
    dC = dcz[None, :] - (X @ dZ.T) / t
    with np.errstate(over="ignore"):
        E = np.expm1(np.minimum(-dC * inv, 700.0))
    dq = b * np.einsum("ij,ij->i", dZ, Z_new + Z - 2.0 * Y) / (2.0 * (t - 1.0))
    eps = 1.0 / inv
    return (eps * float(np.sum(P * E)) + float(dq.sum()),
            eps * float(np.sum(P * np.abs(E))) + float(np.abs(dq).sum()))


def _dual_value(phi, psi, Z, C, log_a, log_b, a, b, Y, eps, t):
    L = _log_plan(phi, psi, C, log_a, log_b, eps)
    mass = math.exp(float(_lse(L.ravel(), axis=0)))
    return eps * mass - float(a @ phi) - float(b @ psi) + _quad(Z, Y, b, t)


def primal_g(P: TransportPlan, X, Y, b, t: float) -> float:
    """Barycentric objective ``sum_j b_j |t y_j - (t-1) bary_j(P)|^2 / (2t(t-1))``."""
    b = np.asarray(b, dtype=float)
    W = t * np.asarray(Y, dtype=float) - (t - 1.0) * (P.entries.T @ np.asarray(X, dtype=float)) / b[:, None]
    return float(b @ np.einsum("ij,ij->i", W, W)) / (2.0 * t * (t - 1.0))


def entropy_term(P: TransportPlan) -> float:
    """``sum_ij P_ij (log(P_ij/(a_i b_j)) - 1)`` with ``0 log 0 = 0``."""
    E = P.entries
    ref = np.outer(P.row_marginal, P.col_marginal)
    pos = E > 0
    return float(np.sum(E[pos] * (np.log(E[pos] / ref[pos]) - 1.0)))


def moment_constant(nu0: AtomicMeasure, nu1: AtomicMeasure, t: float) -> float:
    """``M2(nu1)/(2(t-1)) - M2(nu0)/(2t)``, the offset between the two formulations."""
    return second_moment(nu1) / (2.0 * (t - 1.0)) - second_moment(nu0) / (2.0 * t)


def extrapolation_objective(mu: AtomicMeasure, nu0: AtomicMeasure, nu1: AtomicMeasure,
                            t: float, *, cap: int = DEFAULT_CAP) -> float:
    """``W2^2(mu, nu1)/(2(t-1)) - W2^2(mu, nu0)/(2t)`` with exact distances."""
    if mu.dim == 1:
        d1, d0 = w2_sq_1d(mu, nu1), w2_sq_1d(mu, nu0)
    else:
        d1, d0 = w2_sq_exact(mu, nu1, cap=cap)[0], w2_sq_exact(mu, nu0, cap=cap)[0]
    return d1 / (2.0 * (t - 1.0)) - d0 / (2.0 * t)


def initial_support(nu0: AtomicMeasure, nu1: AtomicMeasure, t: float) -> np.ndarray:
    """``z_j = t y_j - (t-1) bary(nu0)``, which lies in ``t y_j - (t-1) conv(X)``."""
    return t * nu1.points - (t - 1.0) * barycenter(nu0)[None, :]


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _resolve_tau(config: SolverConfig, eps: float, t: float, b_max: float, D: float):
    cap = step_cap(t, b_max)
    if config.tau == "adaptive":
        return cap, True
    if config.tau == "theory":
        return step_size_K(t, b_max, max(D, 1e-300)) * eps, False
    tau = float(config.tau)
    if tau > cap:
        warnings.warn(f"tau={tau:.3e} clamped to t(t-1)/|b|_inf = {cap:.3e}", stacklevel=3)
        tau = cap
    return tau, False


_JIT_CHUNK = 65_536


def _jit_enabled() -> bool:
    return os.environ.get("WEXT_NO_JIT", "") in ("", "0")


def _run_phase_jit(X, Y, a, b, t, eps, tau, cap, adaptive, config, phi, psi, Z, trace, phase,
                   record):
    """One phase through the compiled kernel; updates ``phi``, ``psi``, ``Z`` in place."""
    from ._kernels import run_phase

    done = 0
    ok = False
    P = None
    X = np.ascontiguousarray(X)
    Y = np.ascontiguousarray(Y)
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    # the kernel keeps no state beyond phi, psi, Z and tau, so chunks chain exactly
    while done < config.max_iter and not ok:
        m = min(_JIT_CHUNK, config.max_iter - done)
        buf = [np.empty(m) for _ in range(6)]
        z_out = np.empty((m if record else 0,) + Z.shape)
        n, ok, tau, P = run_phase(X, Y, a, b, t, eps, float(tau), cap, adaptive, _ARMIJO_GROW,
                                  _ARMIJO_SHRINK, _ARMIJO_MAX_BACKTRACK, m, config.tol,
                                  phi, psi, Z, *buf, z_out)
        f, f_phi, f_psi, res, gn, taus = (arr[:n] for arr in buf)
        if n and not math.isfinite(f[-1]):
            raise NonFiniteIntermediate(f"dual value became {f[-1]} at iteration {done + n - 1}")
        for series, values in ((trace.f, f), (trace.f_phi, f_phi), (trace.f_psi, f_psi),
                               (trace.marginal_residual, res), (trace.z_grad_norm, gn),
                               (trace.tau, taus), (trace.epsilon, np.full(n, eps))):
            series.frombytes(np.ascontiguousarray(values).tobytes())
        trace.phase.frombytes(np.full(n, phase, dtype=np.int64).tobytes())
        if record:
            trace.support.extend(z_out[:n])
        done += n
    return done, bool(ok), tau, P


def solve(
    nu0: AtomicMeasure,
    nu1: AtomicMeasure,
    config: SolverConfig,
    *,
    init: Optional[DualState] = None,
    callback: Optional[Callable[[int, int, DualState], None]] = None,
    compute_values: bool = True,
    record_support: bool = False,
) -> ExtrapolationResult:
    """Entropic metric extrapolation of ``nu0 -> nu1`` at time ``config.t``.

    Parameters
    ----------
    nu0, nu1 : AtomicMeasure
        Measures at times 0 and 1.
    config : SolverConfig
    init : DualState, optional
        Warm start.  Its ``Z`` must lie in ``t y_j - (t-1) conv(X)`` for the
        boundedness guarantee; the default init does.
    callback : callable, optional
        Called as ``callback(phase, n, state)`` after every iteration.
    compute_values : bool
        Evaluate ``p_value`` with exact transport (skip for speed).
    record_support : bool
        Store ``Z`` after every iteration in ``trace.support``.

    Returns
    -------
    ExtrapolationResult
        ``converged`` is False when a phase exhausted ``max_iter``; the
        partial result and trace are still returned.
    """
    if nu0.dim != nu1.dim:
        raise DimensionMismatch(f"nu0 has dim {nu0.dim}, nu1 has dim {nu1.dim}")
    t = float(config.t)
    X, a = nu0.points, nu0.weights
    Y, b = nu1.points, nu1.weights
    log_a, log_b = np.log(a), np.log(b)
    b_max = float(b.max())
    D = float(np.sqrt(sq_dist(X, Y).max()))
    cap = step_cap(t, b_max)
    ld = config.log_domain

    if init is None:
        phi = np.zeros(a.size)
        psi = np.zeros(b.size)
        Z = initial_support(nu0, nu1, t)
    else:
        phi, psi, Z = (np.array(init.phi, dtype=float), np.array(init.psi, dtype=float),
                       np.array(init.Z, dtype=float))
        phi[-1] = 0.0
    trace = ConvergenceTrace()
    converged = True
    total = 0
    tau = None
    # C_ij = cx_i + cz_j - <x_i, z_j>/t; the two vector parts fold into the potentials
    cx = np.einsum("ij,ij->i", X, X) / (2.0 * t)
    a_rest = float(a[:-1].sum())

    for phase, eps in enumerate(config.schedule()):
        tau_k, adaptive = _resolve_tau(config, eps, t, b_max, D)
        if adaptive and tau is not None:
            tau = min(cap, tau)
        else:
            tau = tau_k
        if not ld:
            _check_finite(np.exp(-cost_matrix(Z, X, t) / eps), "Gibbs kernel")
        inv = 1.0 / eps
        lax = log_a - cx * inv
        H = (X @ Z.T) * (inv / t)
        cz = np.einsum("ij,ij->i", Z, Z) / (2.0 * t)
        quad = _quad(Z, Y, b, t)
        trace.f_start.append(_dual_value(phi, psi, Z, cost_matrix(Z, X, t), log_a, log_b,
                                         a, b, Y, eps, t))
        if ld and callback is None and _jit_enabled():
            n, phase_ok, tau, P = _run_phase_jit(X, Y, a, b, t, eps, tau, cap, adaptive,
                                                 config, phi, psi, Z, trace, phase,
                                                 record_support)
            total += n
            logger.debug("phase %d eps=%.3e iters=%d converged=%s", phase, eps, n, phase_ok)
            converged = phase_ok
            if not phase_ok:
                logger.warning("phase %d (eps=%.3e) hit max_iter=%d", phase, eps, config.max_iter)
            continue
        phase_ok = False
        for n in range(config.max_iter):
            # phi half-step; rows i < M-1 sum to a_i afterwards
            if ld:
                S = H + (log_b + (psi - cz) * inv)[None, :]
                m = S.max(axis=1)
                row = np.log(np.exp(S - m[:, None]).sum(axis=1)) + m
            else:
                row = _row_lse(psi, cost_matrix(Z, X, t), log_b, eps, False) + cx * inv
            phi = cx - eps * row
            gauge_row = row[-1] - cx[-1] * inv
            phi[-1] = 0.0
            mass13 = a_rest + a[-1] * math.exp(min(gauge_row, 700.0))
            f_phi = eps * mass13 - float(a @ phi) - float(b @ psi) + quad
            # psi half-step; every column sums to b_j afterwards
            u = lax + phi * inv
            if ld:
                S = H + u[:, None]
                m = S.max(axis=0)
                col = np.log(np.exp(S - m[None, :]).sum(axis=0)) + m
            else:
                col = _col_lse(phi, cost_matrix(Z, X, t), log_a, eps, False) + cz * inv
            psi = cz - eps * col
            lin = float(a @ phi) + float(b @ psi)
            f_psi = eps - lin + quad

            P = np.exp(S - col[None, :] + log_b[None, :]) if ld else np.exp(
                H + u[:, None] + (log_b + (psi - cz) * inv)[None, :])
            residual = float(np.max(np.abs(P.sum(axis=1) - a)))
            g = _z_grad(Z, P, X, Y, b, t)
            g2 = float(np.sum(g * g))
            gnorm = math.sqrt(g2)

            tries = 1
            if adaptive:
                tau = min(cap, tau * _ARMIJO_GROW)
            while True:
                dZ = -tau * g
                Z_new = Z + dZ
                delta, scale = _z_step_change(X, Y, b, P, Z, dZ, Z_new, inv, t)
                f_new = f_psi + delta
                if not adaptive or delta <= -0.5 * tau * g2 + 1e-13 * scale:
                    H_new = (X @ Z_new.T) * (inv / t)
                    cz_new = np.einsum("ij,ij->i", Z_new, Z_new) / (2.0 * t)
                    quad_new = _quad(Z_new, Y, b, t)
                    break
                if tries >= _ARMIJO_MAX_BACKTRACK:
                    Z_new, H_new, cz_new, quad_new, f_new = Z, H, cz, quad, f_psi
                    break
                tau *= _ARMIJO_SHRINK
                tries += 1

            if not math.isfinite(f_new):
                raise NonFiniteIntermediate(f"dual value became {f_new} at iteration {n}")
            Z, H, cz, quad = Z_new, H_new, cz_new, quad_new
            trace.f.append(f_new)
            trace.f_phi.append(f_phi)
            trace.f_psi.append(f_psi)
            trace.marginal_residual.append(residual)
            trace.z_grad_norm.append(gnorm)
            trace.epsilon.append(eps)
            trace.tau.append(tau)
            trace.phase.append(phase)
            if record_support:
                trace.support.append(Z.copy())
            total += 1
            if callback is not None:
                callback(phase, n, DualState(phi, psi, Z))
            if max(residual, tau * gnorm) <= config.tol:
                phase_ok = True
                break
        logger.debug("phase %d eps=%.3e iters=%d converged=%s", phase, eps, n + 1, phase_ok)
        converged = phase_ok
        if not phase_ok:
            logger.warning("phase %d (eps=%.3e) hit max_iter=%d", phase, eps, config.max_iter)

    eps = config.schedule()[-1]
    state = DualState(phi, psi, Z)
    # plan of the last psi half-step, whose columns are exact
    plan = TransportPlan(P, a, b)
    nu_t = AtomicMeasure(Z, b)
    g_val = primal_g(plan, X, Y, b, t)
    f_val = trace.f[-1]
    if compute_values:
        p_val = extrapolation_objective(nu_t, nu0, nu1, t)
        eqbp = abs(p_val - (-g_val + moment_constant(nu0, nu1, t)))
    else:
        p_val = eqbp = float("nan")
    return ExtrapolationResult(
        nu_t=nu_t, plan=plan, state=state, dual_value=f_val, primal_g=g_val,
        p_value=p_val, eqbp_residual=eqbp, converged=converged, iterations=total,
        trace=trace, config=config,
    )
