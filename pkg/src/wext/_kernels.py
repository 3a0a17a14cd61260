"""Compiled inner loop for the log-domain solver.

Mirrors the numpy loop in :func:`wext.sinkhorn.solve` step for step; the
numpy version stays the reference and is used whenever a per-iteration
callback or naive (non-log) exponentials are requested.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _z_step_change(X, Y, b, P, Z, g, tau, t, inv, Zn, czn):
    """``f(Z - tau g) - f(Z)`` at fixed potentials and a bound on its rounding scale.

    Uses ``P_ij (exp(-dC_ij/eps) - 1)`` through expm1 and factored quadratic
    differences, so the change is accurate even far below ``eps |f|``.  Fills
    ``Zn`` and ``czn``; returns ``(delta, scale, 2(t-1) * quad(Zn))``.
    """
    M, d = X.shape
    N = Z.shape[0]
    ent = 0.0
    ent_abs = 0.0
    dq = 0.0
    dq_abs = 0.0
    qn = 0.0
    dz = np.empty(d)
    for j in range(N):
        dcz = 0.0
        dqj = 0.0
        s = 0.0
        q = 0.0
        for k in range(d):
            step = -tau * g[j, k]
            zz = Z[j, k] + step
            dz[k] = step
            Zn[j, k] = zz
            dcz += step * (zz + Z[j, k])
            dqj += step * (zz + Z[j, k] - 2.0 * Y[j, k])
            s += zz * zz
            q += (zz - Y[j, k]) ** 2
        czn[j] = s / (2.0 * t)
        qn += q * b[j]
        dcz /= 2.0 * t
        dq += b[j] * dqj
        dq_abs += b[j] * abs(dqj)
        for i in range(M):
            lin = 0.0
            for k in range(d):
                lin += X[i, k] * dz[k]
            arg = -(dcz - lin / t) * inv
            e = math.expm1(min(arg, 700.0))
            ent += P[i, j] * e
            ent_abs += P[i, j] * abs(e)
    eps = 1.0 / inv
    half = 1.0 / (2.0 * (t - 1.0))
    return eps * ent + dq * half, eps * ent_abs + dq_abs * half, qn


@njit(cache=True)
def run_phase(X, Y, a, b, t, eps, tau, cap, adaptive, grow, shrink, max_back,
              max_iter, tol, phi, psi, Z,
              f_out, fphi_out, fpsi_out, res_out, gnorm_out, tau_out, z_out):
    """Run one fixed-epsilon phase in place on ``phi``, ``psi``, ``Z``.

    ``z_out`` receives the support after every iteration unless it has
    length zero.  Returns ``(iterations, converged, tau, P)`` where ``P`` is the plan of the
    last psi half-step.
    """
    M, d = X.shape
    N = Y.shape[0]
    inv = 1.0 / eps
    log_a = np.log(a)
    log_b = np.log(b)
    cx = np.empty(M)
    for i in range(M):
        s = 0.0
        for k in range(d):
            s += X[i, k] * X[i, k]
        cx[i] = s / (2.0 * t)
    a_rest = 0.0
    for i in range(M - 1):
        a_rest += a[i]

    H = np.empty((M, N))
    cz = np.empty(N)
    P = np.empty((M, N))
    row = np.empty(M)
    col = np.empty(N)
    u = np.empty(M)
    v = np.empty(N)
    g = np.empty((N, d))
    Zn = np.empty((N, d))
    czn = np.empty(N)

    for i in range(M):
        for j in range(N):
            s = 0.0
            for k in range(d):
                s += X[i, k] * Z[j, k]
            H[i, j] = s * inv / t
    quad = 0.0
    for j in range(N):
        s = 0.0
        q = 0.0
        for k in range(d):
            s += Z[j, k] * Z[j, k]
            q += (Z[j, k] - Y[j, k]) ** 2
        cz[j] = s / (2.0 * t)
        quad += q * b[j]
    quad /= 2.0 * (t - 1.0)

    record = z_out.shape[0] > 0
    converged = False
    n_done = 0
    for n in range(max_iter):
        # phi half-step
        for j in range(N):
            v[j] = log_b[j] + (psi[j] - cz[j]) * inv
        for i in range(M):
            mx = -np.inf
            for j in range(N):
                val = H[i, j] + v[j]
                if val > mx:
                    mx = val
            acc = 0.0
            for j in range(N):
                acc += math.exp(H[i, j] + v[j] - mx)
            row[i] = math.log(acc) + mx
        for i in range(M):
            phi[i] = cx[i] - eps * row[i]
        gauge_row = row[M - 1] - cx[M - 1] * inv
        phi[M - 1] = 0.0
        lin_phi = 0.0
        lin_psi = 0.0
        for i in range(M):
            lin_phi += a[i] * phi[i]
        for j in range(N):
            lin_psi += b[j] * psi[j]
        f_phi = eps * (a_rest + a[M - 1] * math.exp(min(gauge_row, 700.0))) - lin_phi - lin_psi + quad

        # psi half-step
        for i in range(M):
            u[i] = log_a[i] - cx[i] * inv + phi[i] * inv
        for j in range(N):
            mx = -np.inf
            for i in range(M):
                val = H[i, j] + u[i]
                if val > mx:
                    mx = val
            acc = 0.0
            for i in range(M):
                acc += math.exp(H[i, j] + u[i] - mx)
            col[j] = math.log(acc) + mx
            psi[j] = cz[j] - eps * col[j]
        lin_psi = 0.0
        for j in range(N):
            lin_psi += b[j] * psi[j]
        lin = lin_phi + lin_psi
        f_psi = eps - lin + quad

        # plan, row residual, Z gradient
        residual = 0.0
        for i in range(M):
            rs = 0.0
            for j in range(N):
                p = math.exp(H[i, j] + u[i] - col[j] + log_b[j])
                P[i, j] = p
                rs += p
            r = abs(rs - a[i])
            if r > residual:
                residual = r
        g2 = 0.0
        for j in range(N):
            cs = 0.0
            for i in range(M):
                cs += P[i, j]
            for k in range(d):
                px = 0.0
                for i in range(M):
                    px += P[i, j] * X[i, k]
                gk = (Z[j, k] - Y[j, k]) * b[j] / (t - 1.0) - (Z[j, k] * cs - px) / t
                g[j, k] = gk
                g2 += gk * gk
        gnorm = math.sqrt(g2)

        # Z step (with backtracking when adaptive)
        if adaptive:
            tau = min(cap, tau * grow)
        tries = 1
        accepted = True
        while True:
            delta, scale, qn = _z_step_change(X, Y, b, P, Z, g, tau, t, inv, Zn, czn)
            qn /= 2.0 * (t - 1.0)
            f_new = f_psi + delta
            if (not adaptive) or delta <= -0.5 * tau * g2 + 1e-13 * scale:
                break
            if tries >= max_back:
                accepted = False
                break
            tau *= shrink
            tries += 1

        if accepted:
            for j in range(N):
                for k in range(d):
                    Z[j, k] = Zn[j, k]
                cz[j] = czn[j]
            quad = qn
            for i in range(M):
                for j in range(N):
                    s = 0.0
                    for k in range(d):
                        s += X[i, k] * Z[j, k]
                    H[i, j] = s * inv / t
        else:
            f_new = f_psi

        f_out[n] = f_new
        fphi_out[n] = f_phi
        fpsi_out[n] = f_psi
        res_out[n] = residual
        gnorm_out[n] = gnorm
        tau_out[n] = tau
        if record:
            for j in range(N):
                for k in range(d):
                    z_out[n, j, k] = Z[j, k]
        n_done = n + 1
        if not math.isfinite(f_new):
            break
        if max(residual, tau * gnorm) <= tol:
            converged = True
            break
    return n_done, converged, tau, P
