"""Acceptance criteria, one test per criterion.

Every test prints a line ``CRITERION <n>: PASS|FAIL <details>`` and then
asserts.  The solver runs behind criteria 1-5, 10 and 12 are computed once
(module fixture ``battery``) with iterate logging, so criteria 6 and 7 can
inspect every logged iteration of every one of them.  Hull membership of the
logged supports is counted right after each 2D solve.
"""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from conftest import in_hull_2d, random_measure
from wext import fixture
from wext.exact_1d import extrapolate_1d
from wext.exact_ot import w2, w2_1d, w2_sq_exact
from wext.jko import FlowConfig, extrapolation_trajectory, run_flow
from wext.measures import AtomicMeasure, dirac
from wext.qp_oracle import certify_solution, fw_solve
from wext.sinkhorn import (
    DualState,
    SolverConfig,
    cost_matrix,
    dual_objective,
    extrapolation_objective,
    moment_constant,
    plan_from_duals,
    primal_g,
    solve,
    z_gradient,
)

EPS = 1e-3
# 1D runs compare against the exact solution, whose entropic bias grows like eps
EPS_1D = 1e-4
# iterations grow like 1/eps when the optimal plan is not a vertex
MAX_ITER = 2_000_000


def annealed(t, floor=EPS):
    return SolverConfig(t=t, epsilon=1.0, anneal=(0.5, floor), max_iter=MAX_ITER)


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {n}: {detail}"


@dataclass
class Run:
    nu0: AtomicMeasure
    nu1: AtomicMeasure
    t: float
    res: object
    seconds: float
    iterates: int = 0
    violations: int = 0


def _hull_violations(X, Y, t, support, chunk=4096):
    """Count ``(t y_j - z_j)/(t-1)`` outside conv(X) over all logged iterates."""
    bad = 0
    for k in range(0, len(support), chunk):
        Z = np.asarray(support[k:k + chunk])
        pre = ((t * Y[None] - Z) / (t - 1.0)).reshape(-1, X.shape[1])
        bad += int(np.sum(~in_hull_2d(X, pre, 1e-9)))
    return bad


def _run(nu0, nu1, t, floor=EPS):
    start = time.perf_counter()
    res = solve(nu0, nu1, annealed(t, floor), record_support=nu0.dim == 2)
    run = Run(nu0, nu1, t, res, time.perf_counter() - start)
    if nu0.dim == 2:
        run.iterates = len(res.trace.support)
        run.violations = _hull_violations(nu0.points, nu1.points, t, res.trace.support)
        res.trace.support = []
    return run


def _random_instance(rng, max_atoms, dims):
    M, N = rng.integers(1, max_atoms + 1, size=2)
    d = int(rng.choice(dims))
    return random_measure(rng, M, d), random_measure(rng, N, d, shift=rng.normal(size=d))


@pytest.fixture(scope="module")
def battery():
    # compile the kernel before anything is timed
    solve(dirac([0.0, 0.0]), dirac([1.0, 0.0]), SolverConfig(t=2.0, epsilon=0.5))
    rng = np.random.default_rng(20240601)
    out = {}
    four = fixture("four_dirac_nu0"), fixture("four_dirac_nu1")
    out["c1"] = [_run(*four, t) for t in (2.0, 3.0)]
    out["c1_t5"] = [_run(*four, 5.0)]
    out["c2"] = []
    for _ in range(3):
        nu0 = random_measure(rng, 10, 2)
        x1 = rng.normal(size=2) * 2
        out["c2"] += [_run(nu0, dirac(x1), t) for t in (1.5, 3.0)]
    trans = fixture("translation_nu0"), fixture("translation_nu1")
    out["c3_translation"] = [_run(*trans, t) for t in (2.0, 3.0)]
    out["c3_random"] = [_run(*_random_instance(rng, 6, (2,)), float(rng.uniform(1.5, 4.0)))
                        for _ in range(10)]
    out["c4"] = [_run(*_random_instance(rng, 8, (1, 2, 3)), float(rng.uniform(1.5, 4.0)))
                 for _ in range(20)]
    out["c5"] = []
    for _ in range(50):
        M, N = rng.integers(1, 21, size=2)
        t = float(rng.choice([1.5, 2.0, 3.0]))
        out["c5"].append(_run(random_measure(rng, M, 1), random_measure(rng, N, 1), t, EPS_1D))
    fixtures = [("dirac_nu0", "dirac_nu1"), ("fig5_nu0", "fig5_sym_nu1"),
                ("fig5_nu0", "fig5_pert_nu1"), ("line_nu0", "line_nu1")]
    out["c12"] = [_run(fixture(a), fixture(b), t) for a, b in fixtures for t in (2.0, 3.0)]
    out["c12"] += [_run(*_random_instance(rng, 10, (2, 3)), float(rng.uniform(1.5, 4.0)))
                   for _ in range(15)]
    return out


def _all_runs(battery):
    return [r for runs in battery.values() for r in runs]


def _support_distance(m, points):
    """W2 between ``m`` and the uniform measure on ``points``."""
    return w2(m, AtomicMeasure(points))


def test_criterion_01_four_dirac_closed_form(battery, capsys):
    r2, r3 = battery["c1"]
    d2 = _support_distance(r2.res.nu_t, [(0.0, 1.0), (0.0, -1.0)])
    d3 = _support_distance(r3.res.nu_t, [(1.0, 2.0), (-1.0, -2.0)])
    secs = r2.seconds + r3.seconds
    ok = d2 <= 2e-2 and d3 <= 2e-2 and secs < 5.0
    report(capsys, 1, ok, f"W2 at t=2 {d2:.2e}, W2 at t=3 vs +-(1,2) {d3:.2e}, runtime {secs:.2f}s")


def test_criterion_01_companion_corrected_targets(battery, capsys):
    # the branch formula with its 1/5 factor: (1/2,1) + ((t-5/2)/5)(1,2)
    r3 = battery["c1"][1]
    r5 = battery["c1_t5"][0]
    d3 = _support_distance(r3.res.nu_t, [(0.6, 1.2), (-0.6, -1.2)])
    d5 = _support_distance(r5.res.nu_t, [(1.0, 2.0), (-1.0, -2.0)])
    ok = d3 <= 2e-2 and d5 <= 2e-2
    with capsys.disabled():
        print(f"\n  companion 1: {'PASS' if ok else 'FAIL'} W2 at t=3 vs +-(0.6,1.2) {d3:.2e}, "
              f"W2 at t=5 vs +-(1,2) {d5:.2e}")
    assert ok


def test_criterion_02_dirac_target(battery, capsys):
    worst = 0.0
    for r in battery["c2"]:
        bary = r.nu0.weights @ r.nu0.points
        target = bary + r.t * (r.nu1.points[0] - bary)
        worst = max(worst, w2(r.res.nu_t, dirac(target)))
    report(capsys, 2, worst <= 1e-2, f"worst W2 to delta {worst:.2e} over {len(battery['c2'])} runs")


def test_criterion_03_lower_bound(battery, capsys):
    tol = 5 * EPS
    trans_err = max(abs(r.res.p_value + w2_sq_exact(r.nu0, r.nu1)[0] / 2)
                    for r in battery["c3_translation"])
    slack = min(r.res.p_value + w2_sq_exact(r.nu0, r.nu1)[0] / 2 + tol for r in battery["c3_random"])
    ok = trans_err <= tol and slack >= 0
    report(capsys, 3, ok, f"translation |p + W2^2/2| {trans_err:.2e} (tol {tol:.0e}); "
                          f"min slack over random {slack:.2e}")


def test_criterion_04_eqbp_identity(battery, capsys):
    tol = max(1e-3, 5 * EPS)
    worst = 0.0
    for r in battery["c4"]:
        p_val = extrapolation_objective(r.res.nu_t, r.nu0, r.nu1, r.t)
        g_val = primal_g(r.res.plan, r.nu0.points, r.nu1.points, r.nu1.weights, r.t)
        worst = max(worst, abs(p_val - (-g_val + moment_constant(r.nu0, r.nu1, r.t))))
    report(capsys, 4, worst <= tol, f"worst residual {worst:.2e} over 20 instances (tol {tol:.0e})")


def test_criterion_05_one_dimensional_oracle(battery, capsys):
    worst_sk, worst_fw = 0.0, 0.0
    for r in battery["c5"]:
        exact = extrapolate_1d(r.nu0, r.nu1, r.t)
        worst_sk = max(worst_sk, w2_1d(r.res.nu_t, exact))
        fw = fw_solve(r.nu0, r.nu1, r.t)
        worst_fw = max(worst_fw, w2_1d(fw.support(r.nu0, r.nu1, r.t), exact))
    ok = worst_sk <= 5e-3 and worst_fw <= 1e-6
    report(capsys, 5, ok, f"Sinkhorn vs PAV {worst_sk:.2e}, PAV vs Frank-Wolfe {worst_fw:.2e}")


def test_criterion_06_boundedness(battery, capsys):
    runs = [r for r in _all_runs(battery) if r.nu0.dim == 2]
    bad = sum(r.violations for r in runs)
    iterates = sum(r.iterates for r in runs)
    report(capsys, 6, bad == 0 and iterates > 0,
           f"{bad} violations over {iterates} logged iterates of {len(runs)} 2D runs")


def test_criterion_07_monotone_decrease(battery, capsys):
    runs = _all_runs(battery)
    worst = max(r.res.trace.max_increase() for r in runs)
    report(capsys, 7, worst <= 1e-10, f"largest sub-step increase {worst:.2e} over {len(runs)} runs")


def test_criterion_08_linear_rate(capsys):
    rng = np.random.default_rng(0)
    nu0, nu1 = random_measure(rng, 5, 2), random_measure(rng, 5, 2)
    res = solve(nu0, nu1, SolverConfig(t=2.0, epsilon=0.05, tol=1e-15, max_iter=500),
                compute_values=False)
    tr = res.trace.as_arrays()
    resid = np.maximum(tr["marginal_residual"], tr["tau"] * tr["z_grad_norm"])
    n = np.arange(50, 500)
    y = np.log(resid[50:500])
    slope, icept = np.polyfit(n, y, 1)
    r2 = 1 - np.sum((y - (slope * n + icept)) ** 2) / np.sum((y - y.mean()) ** 2)
    report(capsys, 8, slope < 0 and r2 >= 0.95, f"slope {slope:.3e}, R^2 {r2:.4f}")


def test_criterion_09_gradient_check(capsys):
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(10):
        nu0, nu1 = random_measure(rng, 4, 2), random_measure(rng, 3, 2)
        t, eps = float(rng.uniform(1.5, 4.0)), 0.3
        st = DualState(rng.normal(size=4) * 0.1, rng.normal(size=3) * 0.1, rng.normal(size=(3, 2)))
        st.phi[-1] = 0.0
        C = cost_matrix(st.Z, nu0.points, t)
        g = z_gradient(st, plan_from_duals(st, C, nu0.weights, nu1.weights, eps),
                       nu0.points, nu1.points, t)
        h = 1e-5
        fd = np.zeros_like(g)
        for j in range(3):
            for k in range(2):
                vals = []
                for sgn in (1, -1):
                    Z = st.Z.copy()
                    Z[j, k] += sgn * h
                    vals.append(dual_objective(DualState(st.phi, st.psi, Z), nu0.weights,
                                               nu1.weights, nu0.points, nu1.points, eps, t))
                fd[j, k] = (vals[0] - vals[1]) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    report(capsys, 9, worst <= 1e-4, f"worst relative error {worst:.2e} over 10 states")


def test_criterion_10_convex_order(battery, capsys):
    runs = battery["c1"] + battery["c1_t5"] + battery["c3_translation"] + battery["c12"]
    verdicts = [certify_solution(r.res, r.nu0, r.nu1, r.t).convex_order for r in runs]
    four = all(verdicts[:3])
    report(capsys, 10, all(verdicts),
           f"{sum(verdicts)}/{len(verdicts)} certified solutions in convex order "
           f"(four-Dirac fixture: {four})")


def _fig5(t_final, h):
    nu0 = fixture("fig5_nu0")
    inner = SolverConfig(t=2.0, epsilon=1.0, anneal=(0.5, EPS))
    devs = {}
    for name in ("sym", "pert"):
        nu1 = fixture(f"fig5_{name}_nu1")
        cfg = FlowConfig(h=h, t_final=t_final, inner=inner)
        flow = run_flow(nu0, nu1, cfg)
        direct = extrapolation_trajectory(nu0, nu1, cfg.times(), inner)
        devs[name] = max(w2(a, b) for a, b in zip(flow, direct))
    return devs


def test_criterion_11_fig5_dichotomy(battery, capsys):
    start = time.perf_counter()
    devs = _fig5(3.0, 4.5e-3)
    secs = time.perf_counter() - start
    ok = devs["sym"] <= 5e-2 and devs["pert"] > 5e-2 and secs < 120
    report(capsys, 11, ok, f"on [1,3]: symmetric max dev {devs['sym']:.2e}, "
                           f"perturbed max dev {devs['pert']:.2e}, runtime {secs:.1f}s")


def test_criterion_11_companion_full_horizon(battery, capsys):
    start = time.perf_counter()
    devs = _fig5(5.5, 4.5e-3)
    secs = time.perf_counter() - start
    ok = devs["sym"] <= 5e-2 and devs["pert"] > 5e-2
    with capsys.disabled():
        print(f"\n  companion 11: {'PASS' if ok else 'FAIL'} on [1,5.5]: symmetric max dev "
              f"{devs['sym']:.2e}, perturbed max dev {devs['pert']:.2e}, runtime {secs:.1f}s")
    assert ok


def test_criterion_12_frank_wolfe(battery, capsys):
    tol = max(1e-3, 5 * EPS)
    worst, worst_gap, count = 0.0, 0.0, 0
    for r in _all_runs(battery):
        if max(r.nu0.size, r.nu1.size) > 10:
            continue
        fw = fw_solve(r.nu0, r.nu1, r.t)
        worst = max(worst, abs(r.res.primal_g - fw.value))
        worst_gap = max(worst_gap, fw.gap)
        count += 1
    ok = worst <= tol and worst_gap <= 1e-6
    report(capsys, 12, ok, f"worst |g - fw| {worst:.2e}, worst gap {worst_gap:.2e} "
                           f"over {count} instances")
