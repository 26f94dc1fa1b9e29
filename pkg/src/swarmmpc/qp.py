"""Per-vehicle trajectory program.

Builds the receding-horizon QP in condensed form: decision variables are the
jerk steps (plus one slack when soft constraints are on), states are affine in
them through the exact discretization. Anti-collision rows are time-varying
separating planes between the own reference and every candidate trajectory of
every other vehicle, buffered by the safety radius in the downwash-scaled
metric.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import solver
from .errors import DegenerateGeometryError
from .nominal import NominalState, InputSequence, ReferenceTrajectory, TrajectoryMetadata

OPTIMAL = solver.OPTIMAL
INFEASIBLE = solver.INFEASIBLE
MAX_ITER = solver.MAX_ITER

_DEGENERATE_NORM = 1e-9


def _integer_ratio(num, den, name):
    r = num / den
    ri = int(round(r))
    if ri < 1 or abs(r - ri) > 1e-9:
        raise ValueError(f"{name}: {num} is not a positive integer multiple of {den}")
    return ri


@dataclass
class OptimizationConfig:
    """Weights, grids and boxes of the trajectory program.

    All sampling times must divide the round period, and the box/collision
    grids must land on the jerk grid and span the full horizon; this is what
    makes the plan shifted by one round satisfy the same constraint set.
    """

    pos_min: np.ndarray  # flight volume, meters
    pos_max: np.ndarray
    vel_max: np.ndarray = field(default_factory=lambda: np.array([1.5, 1.5, 1.5]))
    acc_max: np.ndarray = field(default_factory=lambda: np.array([3.0, 3.0, 3.0]))
    jerk_max: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0, 10.0]))
    horizon: int = 15  # rounds of prediction (H)
    round_period: float = 0.2  # seconds per round (T)
    t_s: float = 0.2  # jerk step length
    t_b: float = 0.2  # state-box grid
    t_c: float = 0.2  # collision grid
    t_o: float = 0.2  # cost grid
    h_b: int = 15
    h_c: int = 15
    h_o: int = 15
    d_hat_min: float = 0.25  # reference safety radius, meters
    theta: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 2.0]))
    state_weight: np.ndarray = field(
        default_factory=lambda: np.diag([1.0, 1.0, 1.0, 0, 0, 0, 0, 0, 0])
    )
    input_weight: np.ndarray = field(default_factory=lambda: 1e-2 * np.eye(3))
    soft_weight_base: float = 1e3
    soft_weight_right: float = 1e4

    def __post_init__(self):
        for name in ("pos_min", "pos_max", "vel_max", "acc_max", "jerk_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.theta = np.asarray(self.theta, dtype=float)
        self.state_weight = np.asarray(self.state_weight, dtype=float)
        self.input_weight = np.asarray(self.input_weight, dtype=float)
        if self.d_hat_min <= 0:
            raise ValueError("d_hat_min must be positive")
        if np.any(np.diag(self.theta) <= 0) or np.any(self.theta != np.diag(np.diag(self.theta))):
            raise ValueError("theta must be diagonal with positive entries")
        self.round_steps = _integer_ratio(self.round_period, self.t_s, "round_period/t_s")
        self.h_s = self.round_steps * self.horizon
        self.b_step = _integer_ratio(self.t_b, self.t_s, "t_b/t_s")
        self.c_step = _integer_ratio(self.t_c, self.t_s, "t_c/t_s")
        self.o_step = _integer_ratio(self.t_o, self.t_s, "t_o/t_s")
        _integer_ratio(self.round_period, self.t_b, "round_period/t_b")
        _integer_ratio(self.round_period, self.t_c, "round_period/t_c")
        if self.h_b * self.b_step != self.h_s:
            raise ValueError("state-box grid must span the horizon exactly")
        if self.h_c * self.c_step != self.h_s:
            raise ValueError("collision grid must span the horizon exactly")
        if self.h_o * self.o_step > self.h_s:
            raise ValueError("cost grid extends past the horizon")

    @property
    def theta_inv_diag(self):
        return 1.0 / np.diag(self.theta)

    def state_min_vector(self):
        return np.concatenate([self.pos_min, -self.vel_max, -self.acc_max])

    def state_max_vector(self):
        return np.concatenate([self.pos_max, self.vel_max, self.acc_max])


def default_config(pos_min=(-1.7, -1.7, 0.0), pos_max=(1.7, 1.7, 2.6), **overrides):
    return OptimizationConfig(pos_min=np.asarray(pos_min, float),
                              pos_max=np.asarray(pos_max, float), **overrides)


class _Statics:
    """Matrices that depend on the config only, built once per config."""

    def __init__(self, cfg: OptimizationConfig):
        dt = cfg.t_s
        h = cfg.h_s
        n_u = 3 * h
        eye3 = np.eye(3)
        F = np.block([
            [eye3, dt * eye3, 0.5 * dt * dt * eye3],
            [np.zeros((3, 3)), eye3, dt * eye3],
            [np.zeros((3, 6)), eye3],
        ])
        G = np.vstack([(dt ** 3 / 6.0) * eye3, 0.5 * dt * dt * eye3, dt * eye3])
        f_pow = np.empty((h + 1, 9, 9))
        f_pow[0] = np.eye(9)
        for d in range(1, h + 1):
            f_pow[d] = F @ f_pow[d - 1]
        fg = np.empty((h, 9, 3))
        for d in range(h):
            fg[d] = f_pow[d] @ G
        S = np.zeros((h + 1, 9, n_u))
        for m in range(1, h + 1):
            for r in range(m):
                S[m, :, 3 * r:3 * r + 3] = fg[m - 1 - r]
        self.a_pow = f_pow
        self.S = S
        self.n_u = n_u

        # cost: states at the cost nodes (node 0 is fixed, constant term only)
        cost_nodes = [k * cfg.o_step for k in range(cfg.h_o + 1)]
        self.cost_nodes = [m for m in cost_nodes if m > 0]
        Q = cfg.state_weight
        P = np.zeros((n_u, n_u))
        sq = np.empty((len(self.cost_nodes), n_u, 9))
        for i, m in enumerate(self.cost_nodes):
            sq[i] = S[m].T @ Q
            P += sq[i] @ S[m]
        for m in cost_nodes:
            if m < h:
                P[3 * m:3 * m + 3, 3 * m:3 * m + 3] += cfg.input_weight
        self.P = 2.0 * P
        self.sq = sq

        # terminal rest: velocity and acceleration of the last node vanish
        self.term_rows = S[h, 3:9, :].copy()

        # state box rows on the box grid (node 0 is the fixed initial state)
        self.box_nodes = [k * cfg.b_step for k in range(1, cfg.h_b + 1)]
        self.box_map = S[self.box_nodes].reshape(len(self.box_nodes) * 9, n_u)
        self.x_min = np.tile(cfg.state_min_vector(), len(self.box_nodes))
        self.x_max = np.tile(cfg.state_max_vector(), len(self.box_nodes))

        self.jerk_lb = np.tile(-cfg.jerk_max, h)
        self.jerk_ub = np.tile(cfg.jerk_max, h)


def _statics(cfg: OptimizationConfig) -> _Statics:
    st = getattr(cfg, "_statics_cache", None)
    if st is None:
        st = _Statics(cfg)
        cfg._statics_cache = st
    return st


@dataclass
class BvcHalfspace:
    """One separating-plane row: the planned position at ``time_index`` on the
    collision grid must satisfy coeff . p <= bound (derived from the unit
    normal and the demanded separation rhs)."""

    normal: np.ndarray  # unit normal in the downwash-scaled frame
    rhs: float  # separation demanded along the normal, meters
    time_index: int  # h in 1..h_c
    other_uav: int
    relaxed: bool  # other vehicle keeps its old plan; plane sits at the radius
    coeff: np.ndarray
    bound: float


def build_bvc(own_traj, other_candidates, other_in_aet, config, other_uav=-1):
    """Separating planes between the own current plan and every candidate of
    one other vehicle, one per collision-grid step.

    Planes are anchored at the reference positions one round ahead of the
    planned positions they constrain (both sit at the same absolute time).
    When the other vehicle is being recomputed this round the plane is placed
    midway; otherwise it is moved up to the safety radius from the other.
    """
    if not other_candidates:
        raise ValueError("other_candidates must be nonempty")
    st = _statics(config)
    ti = config.theta_inv_diag
    d_hat = config.d_hat_min
    own_nodes = own_traj.nodes()
    h_s = config.h_s
    # candidates with identical content (a rebroadcast of the shifted plan,
    # or a settled vehicle replanned in place) would emit duplicate rows and
    # degenerate multipliers; one copy constrains identically
    unique = []
    for cand in other_candidates:
        if not any(np.array_equal(cand.inputs.jerks, u.inputs.jerks)
                   and np.array_equal(cand.initial_state.as_vector(),
                                      u.initial_state.as_vector())
                   for u in unique):
            unique.append(cand)
    out = []
    for cand in unique:
        cand_nodes = cand.nodes()
        for hh in range(1, config.h_c + 1):
            node = min(hh * config.c_step + config.round_steps, h_s)
            p_other = cand_nodes[node, 0:3]
            p_own = own_nodes[node, 0:3]
            nvec = ti * (p_other - p_own)
            nn = float(np.linalg.norm(nvec))
            if nn < _DEGENERATE_NORM:
                raise DegenerateGeometryError(
                    f"coincident reference positions (uav {other_uav}, step {hh})"
                )
            n0 = nvec / nn
            rhs = 0.5 * (d_hat + nn) if other_in_aet else d_hat
            coeff = ti * n0
            out.append(BvcHalfspace(
                normal=n0,
                rhs=rhs,
                time_index=hh,
                other_uav=other_uav,
                relaxed=not other_in_aet,
                coeff=coeff,
                bound=float(coeff @ p_other) - rhs,
            ))
    return out


def collect_halfspaces(uav, own_traj, bank, aet, config):
    """All separating planes for one vehicle against the rest of the bank."""
    out = []
    aet_set = set(aet)
    for j, tracker in enumerate(bank.trackers):
        if j == uav:
            continue
        out.extend(build_bvc(own_traj, tracker.candidates, j in aet_set, config, other_uav=j))
    return out


@dataclass
class QuadraticProgram:
    n: int
    P: np.ndarray
    q: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_in: np.ndarray
    b_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray


def build_problem(uav, own_traj, bank, aet, target: NominalState, config,
                  soft=False, slack_weight=None, halfspaces=None) -> QuadraticProgram:
    """Assemble the trajectory program for one vehicle.

    The plan starts one round ahead at the tracked state, is boxed in input
    and state, ends at rest, and stays on its side of every separating plane.
    With ``soft`` a single slack relaxes the plane rows, linearly penalized so
    it stays at zero whenever the hard rows admit a solution.
    """
    st = _statics(config)
    if halfspaces is None:
        halfspaces = collect_halfspaces(uav, own_traj, bank, aet, config)

    x0 = own_traj.nodes()[config.round_steps]
    a_nodes = np.einsum("mij,j->mi", st.a_pow, x0)

    t_vec = target.as_vector()
    q = np.zeros(st.n_u)
    for i, m in enumerate(st.cost_nodes):
        q += 2.0 * (st.sq[i] @ (a_nodes[m] - t_vec))
    P = st.P

    a_eq = st.term_rows
    b_eq = -a_nodes[config.h_s, 3:9]

    box_off = a_nodes[st.box_nodes].reshape(-1)
    n_box = st.box_map.shape[0]
    n_bvc = len(halfspaces)
    a_in = np.zeros((2 * n_box + n_bvc, st.n_u))
    b_in = np.empty(2 * n_box + n_bvc)
    a_in[0:n_box] = st.box_map
    b_in[0:n_box] = st.x_max - box_off
    a_in[n_box:2 * n_box] = -st.box_map
    b_in[n_box:2 * n_box] = box_off - st.x_min
    for i, hs in enumerate(halfspaces):
        node = hs.time_index * config.c_step
        row = hs.coeff @ st.S[node, 0:3, :]
        a_in[2 * n_box + i] = row
        b_in[2 * n_box + i] = hs.bound - float(hs.coeff @ a_nodes[node, 0:3])

    lb = st.jerk_lb
    ub = st.jerk_ub

    if soft:
        w = config.soft_weight_base if slack_weight is None else float(slack_weight)
        n = st.n_u + 1
        P2 = np.zeros((n, n))
        P2[:-1, :-1] = P
        # linear term dominates (exact penalty); the quadratic one keeps the
        # cost strictly convex in the slack
        P2[-1, -1] = 2.0 * w
        q2 = np.concatenate([q, [w]])
        a_eq2 = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
        a_in2 = np.hstack([a_in, np.zeros((a_in.shape[0], 1))])
        a_in2[2 * n_box:, -1] = -1.0  # slack relaxes only the plane rows
        lb2 = np.concatenate([lb, [0.0]])
        ub2 = np.concatenate([ub, [np.inf]])
        return QuadraticProgram(n, P2, q2, a_eq2, b_eq, a_in2, b_in, lb2, ub2)

    return QuadraticProgram(st.n_u, P, q, a_eq, b_eq, a_in, b_in, lb, ub)


def solve(qp: QuadraticProgram, tol=1e-8, max_iter=4000) -> solver.QpSolution:
    """Solve a program in canonical stacked form; see :mod:`swarmmpc.solver`."""
    n = qp.n
    rows = [qp.a_eq, qp.a_in, np.eye(n)]
    lo = [qp.b_eq, np.full(qp.b_in.shape, -np.inf), qp.lb]
    up = [qp.b_eq, qp.b_in, qp.ub]
    A = np.vstack([r for r in rows if r.shape[0]]) if any(r.shape[0] for r in rows) else np.zeros((0, n))
    return solver.solve_canonical(
        qp.P, qp.q, A, np.concatenate(lo), np.concatenate(up), tol=tol, max_iter=max_iter
    )


def solution_trajectory(sol_x, own_traj, config, calc_round, cu_id) -> ReferenceTrajectory:
    """Turn a solved jerk vector into the plan the vehicle will adopt."""
    jerks = np.asarray(sol_x[: config.h_s * 3], dtype=float).reshape(config.h_s, 3).copy()
    init = NominalState.from_vector(own_traj.nodes()[config.round_steps])
    return ReferenceTrajectory(
        start_round=own_traj.start_round + 1,
        initial_state=init,
        inputs=InputSequence(jerks, config.t_s),
        metadata=TrajectoryMetadata(calc_round, cu_id),
        round_steps=config.round_steps,
    )


def verify_candidate(traj: ReferenceTrajectory, halfspaces, config, tol=1e-9) -> bool:
    """Check a full plan against the program's constraint set within tol.

    Used on the shifted previous plan as the guaranteed fallback when the
    solver fails, and to vet solver output before it is broadcast.
    """
    nodes = traj.nodes()
    if np.any(np.abs(traj.inputs.jerks) > config.jerk_max + tol):
        return False
    x_min = config.state_min_vector()
    x_max = config.state_max_vector()
    for k in range(config.h_b + 1):
        x = nodes[k * config.b_step]
        if np.any(x > x_max + tol) or np.any(x < x_min - tol):
            return False
    if np.max(np.abs(nodes[config.h_s, 3:9])) > tol:
        return False
    for hs in halfspaces:
        p = nodes[hs.time_index * config.c_step, 0:3]
        if float(hs.coeff @ p) > hs.bound + tol:
            return False
    return True
