"""Hot numeric kernels: trajectory rollout and the QP interior-point loop.

Each kernel exists twice: ``<name>_numpy`` is the plain implementation and
``<name>`` is the numba-compiled alias (identical source). The backend is
chosen at import time via the ``SWARMMPC_NUMBA`` environment variable.
"""
import numpy as np

from ._accel import NUMBA_ENABLED, njit

IPM_OPTIMAL = 0
IPM_MAX_ITER = 1
IPM_INFEASIBLE = 2
IPM_SINGULAR = 3


def _rollout_impl(x0, jerks, dt):
    """States on the jerk grid of a triple integrator.

    x0 is the stacked state (position, velocity, acceleration), jerks has one
    row per constant-jerk interval of length dt. Returns an array of shape
    (steps + 1, 9) whose row m is the state after m intervals. The update is
    the exact closed form, kept textually identical to the single-step
    propagation so repeated stepping reproduces the rollout bit for bit.
    """
    steps = jerks.shape[0]
    out = np.empty((steps + 1, 9))
    out[0, :] = x0
    for m in range(steps):
        for c in range(3):
            p = out[m, c]
            v = out[m, 3 + c]
            a = out[m, 6 + c]
            u = jerks[m, c]
            out[m + 1, c] = p + dt * v + 0.5 * dt * dt * a + (dt * dt * dt / 6.0) * u
            out[m + 1, 3 + c] = v + dt * a + 0.5 * dt * dt * u
            out[m + 1, 6 + c] = a + dt * u
    return out


def _ipm_solve_impl(P, q, E, b, G, h, tol, max_iter):
    """Predictor-corrector interior-point iteration for

        minimize 1/2 x'Px + q'x  s.t.  E x = b,  G x <= h.

    Returns (x, y, z, status, iterations) with y the equality and z >= 0 the
    inequality multipliers. The Newton system is reduced to the (x, y) block
    through the slack/multiplier diagonal. Diverging multipliers with a
    stalled residual are reported as primal infeasibility.
    """
    n = P.shape[0]
    ne = E.shape[0]
    mi = G.shape[0]
    kdim = n + ne

    x = np.zeros(n)
    y = np.zeros(ne)
    z = np.ones(mi)
    hn = 1.0
    for i in range(mi):
        if abs(h[i]) > hn:
            hn = abs(h[i])
    s = np.full(mi, hn)

    qn = 1.0
    for i in range(n):
        if abs(q[i]) > qn:
            qn = abs(q[i])

    status = IPM_MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        r_d = P @ x + q
        if ne > 0:
            r_d += E.T @ y
        if mi > 0:
            r_d += G.T @ z
        r_p = (E @ x - b) if ne > 0 else np.zeros(0)
        r_g = (G @ x + s - h) if mi > 0 else np.zeros(0)
        mu = (s @ z) / mi if mi > 0 else 0.0

        nrd = 0.0
        for i in range(n):
            if abs(r_d[i]) > nrd:
                nrd = abs(r_d[i])
        nrp = 0.0
        for i in range(ne):
            if abs(r_p[i]) > nrp:
                nrp = abs(r_p[i])
        nrg = 0.0
        for i in range(mi):
            if abs(r_g[i]) > nrg:
                nrg = abs(r_g[i])

        if nrd <= tol and nrp <= tol and nrg <= tol and mu <= tol:
            status = IPM_OPTIMAL
            break

        zn = 0.0
        for i in range(mi):
            if abs(z[i]) > zn:
                zn = abs(z[i])
        if it > 10 and zn > 1e7 * qn and (nrg > tol * 1e3 or nrp > tol * 1e3):
            status = IPM_INFEASIBLE
            break

        # reduced KKT matrix, shared by predictor and corrector
        w = z / s if mi > 0 else np.zeros(0)
        kkt = np.zeros((kdim, kdim))
        if mi > 0:
            kkt[:n, :n] = P + (G.T * w) @ G
        else:
            kkt[:n, :n] = P.copy()
        for i in range(n):
            kkt[i, i] += 1e-12
        if ne > 0:
            kkt[:n, n:] = E.T
            kkt[n:, :n] = E
            for i in range(ne):
                kkt[n + i, n + i] = -1e-12

        # predictor: affine direction, complementarity target zero
        rhs = np.empty(kdim)
        top = -r_d
        if mi > 0:
            top = top - G.T @ (w * r_g - z)
        rhs[:n] = top
        if ne > 0:
            rhs[n:] = -r_p
        sol = np.linalg.solve(kkt, rhs)
        dx_a = sol[:n]
        if mi > 0:
            ds_a = -r_g - G @ dx_a
            dz_a = -z - w * ds_a
            ap = 1.0
            ad = 1.0
            for i in range(mi):
                if ds_a[i] < 0.0:
                    t = -s[i] / ds_a[i]
                    if t < ap:
                        ap = t
                if dz_a[i] < 0.0:
                    t = -z[i] / dz_a[i]
                    if t < ad:
                        ad = t
            mu_aff = ((s + ap * ds_a) @ (z + ad * dz_a)) / mi
            sigma = (mu_aff / mu) ** 3 if mu > 1e-300 else 0.0

            # corrector with centering
            r_c = z * s + ds_a * dz_a - sigma * mu
            top = -r_d - G.T @ (w * r_g - r_c / s)
            rhs[:n] = top
            if ne > 0:
                rhs[n:] = -r_p
            sol = np.linalg.solve(kkt, rhs)
            dx = sol[:n]
            dy = sol[n:]
            ds = -r_g - G @ dx
            dz = -(r_c / s) - w * ds
        else:
            dx = sol[:n]
            dy = sol[n:]
            ds = np.zeros(0)
            dz = np.zeros(0)

        ap = 1.0
        ad = 1.0
        for i in range(mi):
            if ds[i] < 0.0:
                t = -0.99 * s[i] / ds[i]
                if t < ap:
                    ap = t
            if dz[i] < 0.0:
                t = -0.99 * z[i] / dz[i]
                if t < ad:
                    ad = t
        if ap > 1.0:
            ap = 1.0
        if ad > 1.0:
            ad = 1.0

        x = x + ap * dx
        if ne > 0:
            y = y + ad * dy
        if mi > 0:
            s = s + ap * ds
            z = z + ad * dz

    return x, y, z, status, it


rollout_numpy = _rollout_impl
ipm_solve_numpy = _ipm_solve_impl

if NUMBA_ENABLED:
    rollout = njit(cache=True)(_rollout_impl)
    ipm_solve = njit(cache=True)(_ipm_solve_impl)
else:
    rollout = _rollout_impl
    ipm_solve = _ipm_solve_impl
