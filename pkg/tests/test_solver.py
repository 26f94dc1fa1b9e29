import numpy as np
import pytest

from swarmmpc.solver import INFEASIBLE, MAX_ITER, OPTIMAL, solve_canonical


def kkt_check(P, q, A, lo, up, x, y, tol):
    """Independent optimality check (kept separate from the solver's own)."""
    ax = A @ x
    assert np.max(np.abs(P @ x + q + A.T @ y)) <= tol, "stationarity"
    assert np.max(np.maximum(ax - up, 0), initial=0) <= tol, "upper feasibility"
    assert np.max(np.maximum(lo - ax, 0), initial=0) <= tol, "lower feasibility"
    for i in range(len(lo)):
        if y[i] > tol:
            assert np.isfinite(up[i]) and abs(ax[i] - up[i]) * y[i] <= tol
        elif y[i] < -tol:
            assert np.isfinite(lo[i]) and abs(ax[i] - lo[i]) * -y[i] <= tol


def random_feasible_program(rng, n=None, m=None):
    n = n or rng.integers(3, 12)
    m = m or rng.integers(2, 20)
    M = rng.normal(size=(n, n))
    P = M @ M.T + n * np.eye(n)
    q = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    ax0 = A @ x0
    lo = ax0 - rng.uniform(0.05, 2.0, size=m)
    up = ax0 + rng.uniform(0.05, 2.0, size=m)
    n_eq = int(rng.integers(0, min(3, m) + 1))
    for i in range(n_eq):
        lo[i] = up[i] = ax0[i]
    drop_lo = rng.random(m) < 0.2
    drop_up = rng.random(m) < 0.2
    lo[drop_lo & (lo != up)] = -np.inf
    up[drop_up & np.isfinite(lo)] = np.inf
    return P, q, A, lo, up


def dual_ascent_oracle(P, q, A, lo, up, iters=60000):
    """Accelerated projected gradient on the dual, an independent route to
    the optimum of a strictly convex program."""
    eq = np.isfinite(lo) & np.isfinite(up) & (lo == up)
    E, b = A[eq], lo[eq]
    up_rows = np.flatnonzero(~eq & np.isfinite(up))
    lo_rows = np.flatnonzero(~eq & np.isfinite(lo))
    G = np.vstack([A[up_rows], -A[lo_rows]]) if up_rows.size + lo_rows.size else np.zeros((0, A.shape[1]))
    h = np.concatenate([up[up_rows], -lo[lo_rows]])
    Pinv = np.linalg.inv(P)
    stack = np.vstack([G, E]) if E.size or G.size else np.zeros((0, A.shape[1]))
    L = np.linalg.norm(stack @ Pinv @ stack.T, 2) + 1e-9
    t = 1.0 / L
    lam = np.zeros(len(h))
    nu = np.zeros(len(b))
    ylam, ynu = lam.copy(), nu.copy()
    s_prev = 1.0
    for _ in range(iters):
        x = -Pinv @ (q + G.T @ ylam + E.T @ ynu)
        lam_new = np.maximum(0.0, ylam + t * (G @ x - h))
        nu_new = ynu + t * (E @ x - b)
        s = 0.5 * (1 + np.sqrt(1 + 4 * s_prev * s_prev))
        ylam = lam_new + ((s_prev - 1) / s) * (lam_new - lam)
        ynu = nu_new + ((s_prev - 1) / s) * (nu_new - nu)
        lam, nu, s_prev = lam_new, nu_new, s
    return -Pinv @ (q + G.T @ lam + E.T @ nu)


class TestExamples:
    def test_scalar_bound(self):
        sol = solve_canonical(np.array([[2.0]]), np.zeros(1),
                              np.array([[1.0]]), np.array([1.0]), np.array([np.inf]))
        assert sol.status == OPTIMAL
        assert abs(sol.x[0] - 1.0) <= 1e-8

    def test_equality_analytic(self):
        # minimize (x1-2)^2 + x2^2 subject to x1+x2 = 1
        sol = solve_canonical(np.diag([2.0, 2.0]), np.array([-4.0, 0.0]),
                              np.array([[1.0, 1.0]]), np.array([1.0]), np.array([1.0]))
        assert sol.status == OPTIMAL
        assert np.allclose(sol.x, [1.5, -0.5], atol=1e-8)

    def test_contradictory_bounds_infeasible(self):
        sol = solve_canonical(np.array([[2.0]]), np.zeros(1),
                              np.array([[1.0], [1.0]]),
                              np.array([1.0, -np.inf]), np.array([np.inf, 0.0]))
        assert sol.status == INFEASIBLE

    def test_unconstrained(self):
        sol = solve_canonical(np.diag([2.0, 4.0]), np.array([-2.0, 4.0]),
                              np.zeros((0, 2)), np.zeros(0), np.zeros(0))
        assert sol.status == OPTIMAL
        assert np.allclose(sol.x, [1.0, -1.0])


class TestRandomized:
    def test_kkt_on_random_programs(self):
        rng = np.random.default_rng(42)
        for _ in range(40):
            P, q, A, lo, up = random_feasible_program(rng)
            sol = solve_canonical(P, q, A, lo, up, tol=1e-8)
            assert sol.status == OPTIMAL
            kkt_check(P, q, A, lo, up, sol.x, sol.y, 1e-6)

    def test_against_dual_ascent_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(6):
            P, q, A, lo, up = random_feasible_program(rng, n=int(rng.integers(2, 7)),
                                                      m=int(rng.integers(2, 8)))
            sol = solve_canonical(P, q, A, lo, up, tol=1e-10)
            ref = dual_ascent_oracle(P, q, A, lo, up)
            assert sol.status == OPTIMAL
            assert np.max(np.abs(sol.x - ref)) <= 1e-5

    def test_infeasible_random_certificates(self):
        rng = np.random.default_rng(11)
        hits = 0
        for _ in range(10):
            n = 4
            A1 = rng.normal(size=n)
            # a pair of parallel rows with disjoint intervals
            A = np.vstack([A1, A1])
            lo = np.array([1.0, -np.inf])
            up = np.array([np.inf, 0.5])
            P = np.eye(n) * 2
            q = rng.normal(size=n)
            sol = solve_canonical(P, q, A, lo, up)
            hits += sol.status == INFEASIBLE
        assert hits == 10
