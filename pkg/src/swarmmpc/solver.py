"""Dense convex QP solver: interior point with an active-set polish.

Canonical form handled here:

    minimize    1/2 x' P x + q' x
    subject to  lo <= A x <= up        (rows with lo == up act as equalities)

A predictor-corrector interior-point iteration (see :mod:`swarmmpc.kernels`)
drives the residuals and the complementarity gap down; its multipliers then
seed an active-set polish that solves the KKT system of the guessed active
set on the original data, repairing the guess where needed. A polished
solution satisfies the full optimality conditions essentially to machine
precision; if polishing fails, the interior-point iterate itself is accepted
whenever it meets the requested tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray  # multipliers for the stacked rows, sign: >0 upper, <0 lower
    objective: float
    status: str
    iterations: int
    stationarity: float
    primal_violation: float
    complementarity: float


def _kkt_residuals(P, q, A, lo, up, x, y):
    """Stationarity, primal violation, complementarity and dual-sign error."""
    ax = A @ x if A.shape[0] else np.zeros(0)
    stat = float(np.max(np.abs(P @ x + q + (A.T @ y if A.shape[0] else 0.0))))
    if A.shape[0] == 0:
        return stat, 0.0, 0.0, 0.0
    prim = float(max(np.max(np.maximum(ax - up, 0.0), initial=0.0),
                     np.max(np.maximum(lo - ax, 0.0), initial=0.0)))
    y_pos = np.maximum(y, 0.0)
    y_neg = np.minimum(y, 0.0)
    fin_up = np.isfinite(up)
    fin_lo = np.isfinite(lo)
    comp = 0.0
    if np.any(fin_up):
        comp = max(comp, float(np.max(y_pos[fin_up] * np.abs(up[fin_up] - ax[fin_up]), initial=0.0)))
    if np.any(fin_lo):
        comp = max(comp, float(np.max((-y_neg[fin_lo]) * np.abs(ax[fin_lo] - lo[fin_lo]), initial=0.0)))
    dual_sign = 0.0
    if np.any(~fin_up):
        dual_sign = max(dual_sign, float(np.max(y_pos[~fin_up], initial=0.0)))
    if np.any(~fin_lo):
        dual_sign = max(dual_sign, float(np.max(-y_neg[~fin_lo], initial=0.0)))
    return stat, prim, comp, dual_sign


def _solve_active_kkt(P, q, A, act_low, act_up, lo, up):
    """Equality-constrained solve on the chosen active rows, with light
    regularization and two refinement sweeps."""
    n = P.shape[0]
    act = np.flatnonzero(act_low | act_up)
    na = act.size
    if na:
        a_act = A[act]
        b_act = np.where(act_up[act], up[act], lo[act])
    else:
        a_act = np.zeros((0, n))
        b_act = np.zeros(0)
    delta = 1e-10
    kkt = np.zeros((n + na, n + na))
    kkt[:n, :n] = P + delta * np.eye(n)
    if na:
        kkt[:n, n:] = a_act.T
        kkt[n:, :n] = a_act
        kkt[n:, n:] = -delta * np.eye(na)
    rhs = np.concatenate([-q, b_act])
    sol = np.linalg.solve(kkt, rhs)
    for _ in range(2):
        res = rhs.copy()
        res[:n] -= P @ sol[:n]
        if na:
            res[:n] -= a_act.T @ sol[n:]
            res[n:] -= a_act @ sol[:n]
        sol = sol + np.linalg.solve(kkt, res)
    x = sol[:n]
    y = np.zeros(A.shape[0])
    if na:
        y[act] = sol[n:]
    return x, y, act


def _polish(P, q, A, lo, up, y_seed, tol, max_sweeps=60):
    """Active-set cleanup seeded by the multipliers.

    Solves the KKT system of the guessed active set, then repairs the guess:
    active rows whose multiplier has the wrong sign are released, violated
    inactive rows are activated. Bulk changes can cycle on degenerate row
    clusters; once a signature repeats, the loop switches to single-change
    (lowest index first) updates, which breaks every cycle seen in practice.
    Returns (x, y, residuals) once the full optimality conditions hold at
    tol, or None if the guess cannot be repaired within the sweep budget.
    """
    eq = np.isfinite(lo) & np.isfinite(up) & (lo == up)
    y_thr = max(1e-12, 1e-6 * float(np.max(np.abs(y_seed), initial=0.0)))
    act_low = eq | ((y_seed < -y_thr) & np.isfinite(lo))
    act_up = (~act_low) & (y_seed > y_thr) & np.isfinite(up)
    seen = set()
    single_change = False
    try:
        for _ in range(max_sweeps):
            sig = (act_low * 1 + act_up * 2).astype(np.int8).tobytes()
            if sig in seen:
                single_change = True
            seen.add(sig)

            x, y, act = _solve_active_kkt(P, q, A, act_low, act_up, lo, up)
            wrong_low = act_low & ~eq & (y > tol)
            wrong_up = act_up & (y < -tol)
            ax = A @ x
            inactive = ~(act_low | act_up)
            add_up = inactive & (ax > up + tol)
            add_low = inactive & (ax < lo - tol)

            changed = False
            if single_change:
                wrong = np.flatnonzero(wrong_low | wrong_up)
                add = np.flatnonzero(add_up | add_low)
                if wrong.size:
                    i = wrong[0]
                    act_low[i] = False
                    act_up[i] = False
                    changed = True
                elif add.size:
                    i = add[0]
                    act_up[i] = bool(add_up[i])
                    act_low[i] = bool(add_low[i])
                    changed = True
            else:
                if np.any(wrong_low) or np.any(wrong_up):
                    act_low &= ~wrong_low
                    act_up &= ~wrong_up
                    changed = True
                if np.any(add_up) or np.any(add_low):
                    act_up |= add_up
                    act_low |= add_low
                    changed = True

            if not changed:
                stat, prim, comp, dual_sign = _kkt_residuals(P, q, A, lo, up, x, y)
                if stat <= tol and prim <= tol and comp <= tol and dual_sign <= tol:
                    return x, y, (stat, prim, comp)
                return None
    except np.linalg.LinAlgError:
        return None
    return None


def solve_canonical(P, q, A, lo, up, tol=1e-8, max_iter=4000) -> QpSolution:
    P = np.ascontiguousarray(P, dtype=float)
    q = np.ascontiguousarray(q, dtype=float)
    A = np.ascontiguousarray(A, dtype=float)
    lo = np.ascontiguousarray(lo, dtype=float)
    up = np.ascontiguousarray(up, dtype=float)
    n = P.shape[0]
    m = A.shape[0]

    if m == 0:
        x = np.linalg.solve(P, -q)
        obj = float(0.5 * x @ P @ x + q @ x)
        return QpSolution(x, np.zeros(0), obj, OPTIMAL, 0, 0.0, 0.0, 0.0)

    # split two-sided rows into equality and one-sided inequality form
    eq = np.isfinite(lo) & np.isfinite(up) & (lo == up)
    E = A[eq]
    b = lo[eq]
    up_rows = np.flatnonzero(~eq & np.isfinite(up))
    lo_rows = np.flatnonzero(~eq & np.isfinite(lo))
    G = np.vstack([A[up_rows], -A[lo_rows]]) if (up_rows.size + lo_rows.size) else np.zeros((0, n))
    h = np.concatenate([up[up_rows], -lo[lo_rows]])

    # mild cost scaling keeps the interior-point tolerances relative
    c = 1.0 / max(1.0, float(np.max(np.abs(P))), float(np.max(np.abs(q))))
    ipm_tol = min(tol, 1e-9)
    try:
        x, y_eq, z, code, iters = kernels.ipm_solve(
            c * P, c * q, np.ascontiguousarray(E), b, np.ascontiguousarray(G), h,
            ipm_tol, min(max_iter, 200),
        )
    except np.linalg.LinAlgError:
        # a numerically singular system; callers treat this like an iteration
        # budget failure and fall back
        zero = np.zeros(n)
        return QpSolution(zero, np.zeros(m), 0.0, MAX_ITER, 0, np.inf, np.inf, np.inf)

    # multipliers back in the two-sided convention of the stacked rows
    y = np.zeros(m)
    y[eq] = y_eq / c
    nu = up_rows.size
    y[up_rows] += z[:nu] / c
    y[lo_rows] -= z[nu:] / c

    if code == kernels.IPM_INFEASIBLE:
        stat, prim, comp, _ = _kkt_residuals(P, q, A, lo, up, x, y)
        obj = float(0.5 * x @ P @ x + q @ x)
        return QpSolution(x, y, obj, INFEASIBLE, iters, stat, prim, comp)

    pol = _polish(P, q, A, lo, up, y, tol)
    if pol is not None:
        px, py, (stat, prim, comp) = pol
        obj = float(0.5 * px @ P @ px + q @ px)
        return QpSolution(px, py, obj, OPTIMAL, iters, stat, prim, comp)

    stat, prim, comp, dual_sign = _kkt_residuals(P, q, A, lo, up, x, y)
    obj = float(0.5 * x @ P @ x + q @ x)
    if code == kernels.IPM_OPTIMAL and stat <= tol and prim <= tol \
            and comp <= tol and dual_sign <= tol:
        return QpSolution(x, y, obj, OPTIMAL, iters, stat, prim, comp)
    return QpSolution(x, y, obj, MAX_ITER, iters, stat, prim, comp)
