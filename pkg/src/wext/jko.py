"""JKO gradient flow of ``mu -> -W2^2(nu0, mu) / (2t)``.

Starting from ``nu1`` at time 1, each step with times ``t_n = 1 + n h`` solves

    min_mu  W2^2(nu_curr, mu) / (2h) - W2^2(nu0, mu) / (2 t_n).

Multiplying by ``(t_n - h)`` turns this into the extrapolation objective
``W2^2(mu, nu_curr)/(2(s-1)) - W2^2(mu, nu0)/(2s)`` at ``s = t_n / (t_n - h)``,
so every step is one call to the extrapolation solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .exact_1d import extrapolate_1d_support
from .measures import AtomicMeasure
from .sinkhorn import DualState, SolverConfig, solve


def _default_inner() -> SolverConfig:
    return SolverConfig(t=2.0, epsilon=1e-3)


@dataclass(frozen=True)
class FlowConfig:
    """Controls for :func:`run_flow`.

    Attributes
    ----------
    h : float
        Time step, ``0 < h < 1``.
    t_final : float
        Last time of the flow, ``> 1``.  The final step is shortened to land
        on it exactly.
    inner : SolverConfig
        Template for every step; its ``t`` is replaced by the step's ``s``.
        Annealing, if set, is only used for the first step; later steps
        warm-start at the final epsilon.
    use_1d_exact : bool
        Solve each step with the quantile formula (1D inputs only).
    """

    h: float = 0.1
    t_final: float = 2.0
    inner: SolverConfig = field(default_factory=_default_inner)
    use_1d_exact: bool = False

    def __post_init__(self):
        if not 0 < self.h < 1:
            raise ValueError(f"h must lie in (0, 1), got {self.h}")
        if not self.t_final > 1:
            raise ValueError(f"t_final must exceed 1, got {self.t_final}")

    def times(self) -> np.ndarray:
        """``1, 1+h, 1+2h, ...`` up to and including ``t_final``."""
        n = int(np.ceil((self.t_final - 1.0) / self.h - 1e-9))
        ts = 1.0 + self.h * np.arange(n + 1)
        ts[-1] = self.t_final
        return ts


def reparameterized_time(h: float, t_next: float) -> float:
    """``s = t_next / (t_next - h)`` with ``1/(2(s-1)) : 1/(2s) = 1/(2h) : 1/(2 t_next)``."""
    if not t_next > h > 0:
        raise ValueError(f"need t_next > h > 0, got h={h}, t_next={t_next}")
    return t_next / (t_next - h)


def _warm_state(prev, nu_curr: AtomicMeasure, nu0: AtomicMeasure, s: float) -> DualState:
    # z_j = s y_j - (s-1) bary_j(P_prev) lies in s y_j - (s-1) conv(X)
    bary = prev.plan.bary(nu0.points)
    Z = s * nu_curr.points - (s - 1.0) * bary
    return DualState(prev.state.phi, prev.state.psi, Z)


def jko_step(nu_curr: AtomicMeasure, nu0: AtomicMeasure, h: float, t_next: float,
             inner: SolverConfig, *, use_1d_exact: bool = False, init=None,
             return_result: bool = False):
    """One JKO step from ``nu_curr``, landing at time ``t_next``.

    Returns the new measure (weights of ``nu_curr``), or ``(measure, result)``
    when ``return_result`` is set; ``result`` is None in exact 1D mode.
    """
    s = reparameterized_time(h, t_next)
    if use_1d_exact:
        out = AtomicMeasure(extrapolate_1d_support(nu0, nu_curr, s), nu_curr.weights)
        return (out, None) if return_result else out
    res = solve(nu0, nu_curr, replace(inner, t=s), init=init, compute_values=False)
    return (res.nu_t, res) if return_result else res.nu_t


def run_flow(nu0: AtomicMeasure, nu1: AtomicMeasure, config: FlowConfig,
             *, callback: Optional[Callable[[int, float, AtomicMeasure], None]] = None
             ) -> list[AtomicMeasure]:
    """Trajectory ``[nu1, nu^1, nu^2, ...]`` at the times of ``config.times()``.

    Every step after the first warm-starts from the previous potentials and
    runs at the final epsilon of ``config.inner``.
    """
    times = config.times()
    traj = [nu1]
    prev = None
    inner = config.inner
    eps_final = inner.schedule()[-1]
    for n in range(1, times.size):
        h_n = float(times[n] - times[n - 1])
        t_next = float(times[n])
        cur = traj[-1]
        if config.use_1d_exact or prev is None:
            init, cfg = None, inner
        else:
            s = reparameterized_time(h_n, t_next)
            init = _warm_state(prev, cur, nu0, s)
            cfg = replace(inner, epsilon=eps_final, anneal=None)
        nxt, prev = jko_step(cur, nu0, h_n, t_next, cfg, use_1d_exact=config.use_1d_exact,
                             init=init, return_result=True)
        traj.append(nxt)
        if callback is not None:
            callback(n, t_next, nxt)
    return traj


def extrapolation_trajectory(nu0: AtomicMeasure, nu1: AtomicMeasure, times,
                             inner: SolverConfig, *, use_1d_exact: bool = False
                             ) -> list[AtomicMeasure]:
    """Direct extrapolations ``nu_t`` at each time (``nu1`` itself at ``t = 1``).

    Continuation in ``t``: each solve warm-starts from the previous one.
    """
    out = []
    prev = None
    eps_final = inner.schedule()[-1]
    for t in times:
        t = float(t)
        if t <= 1.0 + 1e-12:
            out.append(nu1)
            continue
        if use_1d_exact:
            out.append(AtomicMeasure(extrapolate_1d_support(nu0, nu1, t), nu1.weights))
            continue
        if prev is None:
            res = solve(nu0, nu1, replace(inner, t=t), compute_values=False)
        else:
            Z = t * nu1.points - (t - 1.0) * prev.plan.bary(nu0.points)
            init = DualState(prev.state.phi, prev.state.psi, Z)
            res = solve(nu0, nu1, replace(inner, t=t, epsilon=eps_final, anneal=None),
                        init=init, compute_values=False)
        prev = res
        out.append(res.nu_t)
    return out
