"""Scenario runner, ground-truth oracle and invariant checkers.

The runner owns the only synchronization point (the communication round) and
records everything the checkers need: reference positions on the collision
grid, actual positions at a finer grid, every tracker's candidate digests and
the fate of every message. Checks are pure functions over the finished trace.
"""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import netsim, tracker
from .cu_agent import CuAgent, CuMessage, TrajectoryMessage, RUN_DMPC
from .errors import FatalInvariantError
from .nominal import sample
from .netsim import Envelope, LossModel, RoundSchedule
from .scenarios import Scenario
from .uav_agent import TrackingModel, UavAgent

_ACT_OVERSAMPLE = 10  # actual positions recorded this many times per collision step


def _traj_digest(traj):
    h = hashlib.blake2b(digest_size=8)
    h.update(np.int64(traj.start_round).tobytes())
    h.update(traj.initial_state.as_vector().tobytes())
    h.update(np.ascontiguousarray(traj.inputs.jerks).tobytes())
    return (traj.metadata.calc_round, traj.metadata.cu_id, h.hexdigest())


@dataclass
class RoundRecord:
    k: int
    ref_grid: np.ndarray  # (N, steps_per_round, 3) reference positions, collision grid
    ref_state0: np.ndarray  # (N, 9) reference state at the round start
    act_fine: np.ndarray | None  # (N, oversampled steps, 3) actual positions
    targets: np.ndarray
    metadata: np.ndarray  # (N, 2) plan identity each vehicle follows
    uav_digests: list  # per vehicle, digest of the followed plan
    adopted: np.ndarray  # (N,) bool
    cu_states: list
    cu_deprecated: np.ndarray  # (M, N) bool
    cu_digests: list  # per cu, per vehicle, tuple of candidate digests
    deliveries: list


@dataclass
class TraceRecord:
    scenario: Scenario
    schedule: RoundSchedule
    rounds: list = field(default_factory=list)
    tail_grid: np.ndarray | None = None  # (N, h_c, 3) grid positions past the last round
    events: list = field(default_factory=list)

    @property
    def n_rounds(self):
        return len(self.rounds)


def run(scenario: Scenario, parallel_cus=False, record_actual=True) -> TraceRecord:
    """Execute a scenario round by round.

    Per round: vehicles adopt or shift their plans, compute units run one
    planning or recovery step (optionally in worker threads; results are
    independent of scheduling), then the communication phase delivers slots.
    Raises FatalInvariantError if a unit can neither solve its program nor
    verify the shifted fallback; that state is unreachable while the safety
    argument holds.
    """
    cfg = scenario.config
    n, m = scenario.n_uavs, scenario.n_cus
    t_com = min(0.095, cfg.round_period / 2)
    schedule = RoundSchedule(n, m, round_period=cfg.round_period,
                             t_calc=cfg.round_period - t_com, t_com=t_com)
    loss = LossModel(scenario.loss_prob, tuple(scenario.jams), seed=scenario.seed)
    tracking = TrackingModel(scenario.delta_d_min, seed=scenario.seed)
    script = {r: t for r, t in scenario.target_script}
    targets0 = script[0]

    uavs = [UavAgent(i, scenario.initial_positions[i], targets0[i],
                     cfg.h_s, cfg.t_s, cfg.round_steps) for i in range(n)]
    cus = [CuAgent(w, n, m, cfg, scenario.trigger, scenario.initial_positions, targets0,
                   seed=scenario.seed, soft_constraints=scenario.soft_constraints,
                   planner=scenario.planner, deadlock_cfg=scenario.deadlock_cfg,
                   disable_loss_recovery=scenario.disable_mlr) for w in range(m)]

    steps_per_round = cfg.round_steps // cfg.c_step
    fine_per_round = steps_per_round * _ACT_OVERSAMPLE
    trace = TraceRecord(scenario, schedule)
    rx = {node: [] for node in schedule.nodes()}
    prev_state = [RUN_DMPC] * m
    prev_depr = [False] * m
    pool = ThreadPoolExecutor(max_workers=m) if parallel_cus else None

    try:
        for k in range(scenario.rounds):
            if k in script:
                for i in range(n):
                    uavs[i].target = script[k][i].copy()

            decoded = {}

            def dec(env):
                obj = decoded.get(id(env))
                if obj is None:
                    obj = netsim.decode(env.payload)
                    decoded[id(env)] = obj
                return obj

            adopted = np.zeros(n, dtype=bool)
            for i, u in enumerate(uavs):
                if k > 0:
                    before = u.current.metadata
                    payloads = [dec(e) for e in rx[("uav", i)] if e.slot >= n]
                    u.on_round_start(payloads, k)
                    adopted[i] = u.current.metadata != before
                if u.current.start_round != k:
                    raise FatalInvariantError(f"uav {i} plan anchored at "
                                              f"{u.current.start_round}, expected {k}")

            envelopes = []
            for i, u in enumerate(uavs):
                measured = None
                if record_actual:
                    measured = u.actual_position(tracking, k * cfg.round_period)
                msg, replies = u.emit(measured)
                envelopes.append(Envelope(schedule.slot_of("uav", i), ("uav", i),
                                          netsim.encode(msg)))
                for cu_slot, reply in replies:
                    envelopes.append(Envelope(schedule.slot_of("cu", cu_slot), ("uav", i),
                                              netsim.encode(reply)))

            def cu_inputs(w):
                uav_msgs = [None] * n
                cu_payloads = []
                for env in rx[("cu", w)]:
                    obj = dec(env)
                    if env.slot < n:
                        uav_msgs[env.slot] = obj
                    else:
                        cu_payloads.append((env.slot - n, obj))
                return uav_msgs, cu_payloads

            inputs = [cu_inputs(w) for w in range(m)]
            if pool is not None:
                txs = list(pool.map(lambda wz: cus[wz].step(*inputs[wz], k), range(m)))
            else:
                txs = [cus[w].step(*inputs[w], k) for w in range(m)]
            for w, tx in enumerate(txs):
                if tx is not None:
                    envelopes.append(Envelope(schedule.slot_of("cu", w), ("cu", w),
                                              netsim.encode(tx)))

            rx, delivery_log = netsim.run_round(k, envelopes, loss, schedule)

            trace.rounds.append(_record_round(
                k, cfg, uavs, cus, tracking, adopted, delivery_log,
                steps_per_round, fine_per_round, record_actual))
            _collect_events(trace.events, k, cus, prev_state, prev_depr)
    finally:
        if pool is not None:
            pool.shutdown()

    tail = np.empty((n, cfg.h_c, 3))
    for i, u in enumerate(uavs):
        for hh in range(cfg.h_c):
            tail[i, hh] = sample(u.current, (steps_per_round + hh) * cfg.t_c).position
    trace.tail_grid = tail
    return trace


def _record_round(k, cfg, uavs, cus, tracking, adopted, delivery_log,
                  steps_per_round, fine_per_round, record_actual):
    n = len(uavs)
    ref_grid = np.empty((n, steps_per_round, 3))
    ref_state0 = np.empty((n, 9))
    act = np.empty((n, fine_per_round, 3)) if record_actual else None
    targets = np.empty((n, 3))
    metadata = np.empty((n, 2), dtype=int)
    uav_digests = []
    for i, u in enumerate(uavs):
        nodes = u.current.nodes()
        for s in range(steps_per_round):
            ref_grid[i, s] = nodes[s * cfg.c_step, 0:3]
        ref_state0[i] = nodes[0]
        if record_actual:
            for s in range(fine_per_round):
                t_abs = k * cfg.round_period + s * cfg.t_c / _ACT_OVERSAMPLE
                act[i, s] = u.actual_position(tracking, t_abs)
        targets[i] = u.target
        metadata[i] = (u.current.metadata.calc_round, u.current.metadata.cu_id)
        uav_digests.append(_traj_digest(u.current))

    m = len(cus)
    cu_states = [c.state for c in cus]
    cu_depr = np.zeros((m, n), dtype=bool)
    cu_digests = []
    for w, c in enumerate(cus):
        row = []
        for i, t in enumerate(c.bank.trackers):
            cu_depr[w, i] = t.deprecated
            row.append(tuple(_traj_digest(cand) for cand in t.candidates))
        cu_digests.append(row)

    return RoundRecord(k, ref_grid, ref_state0, act, targets, metadata, uav_digests,
                       adopted, cu_states, cu_depr, cu_digests, delivery_log)


def _collect_events(events, k, cus, prev_state, prev_depr):
    for w, c in enumerate(cus):
        info = c.last_info
        depr = info.deprecated_after_update
        if depr and not prev_depr[w]:
            events.append({"round": k, "type": "deprecation", "cu": w})
        prev_depr[w] = depr
        if c.state != RUN_DMPC and prev_state[w] == RUN_DMPC:
            events.append({"round": k, "type": "recovery_entered", "cu": w})
        if c.state == RUN_DMPC and prev_state[w] != RUN_DMPC:
            events.append({"round": k, "type": "recovery_left", "cu": w})
        prev_state[w] = c.state
        if info.requested_uav is not None:
            events.append({"round": k, "type": "trajectory_request", "cu": w,
                           "uav": info.requested_uav})
        if info.used_fallback:
            events.append({"round": k, "type": "solver_fallback", "cu": w,
                           "uav": info.planned_uav, "status": info.solver_status})
        if info.deadlock:
            events.append({"round": k, "type": "deadlock_detected", "cu": w})


# -- checks ----------------------------------------------------------------------


@dataclass
class Violation:
    round: int
    step: int
    uav_i: int
    uav_j: int
    distance: float


def _pairwise_min(positions, theta_inv):
    """Min scaled distance and the offending pair for one set of points."""
    scaled = positions * theta_inv
    n = len(scaled)
    best = (np.inf, -1, -1)
    for i in range(n):
        d = np.linalg.norm(scaled[i + 1:] - scaled[i], axis=1)
        if d.size and d.min() < best[0]:
            j = int(np.argmin(d))
            best = (float(d.min()), i, i + 1 + j)
    return best


def check_discrete_collisions(trace: TraceRecord, theta=None, d_hat_min=None,
                              t_c=None, slack=1e-9):
    """Scaled pairwise distance of the followed references on the collision
    grid, every round plus the trailing horizon. Empty list means safe."""
    cfg = trace.scenario.config
    theta = cfg.theta if theta is None else theta
    d_hat = cfg.d_hat_min if d_hat_min is None else d_hat_min
    ti = 1.0 / np.diag(np.asarray(theta, dtype=float))
    violations = []
    for rec in trace.rounds:
        for s in range(rec.ref_grid.shape[1]):
            d, i, j = _pairwise_min(rec.ref_grid[:, s, :], ti)
            if d < d_hat - slack:
                violations.append(Violation(rec.k, s, i, j, d))
    if trace.tail_grid is not None and trace.rounds:
        last = trace.rounds[-1]
        for s in range(trace.tail_grid.shape[1]):
            d, i, j = _pairwise_min(trace.tail_grid[:, s, :], ti)
            if d < d_hat - slack:
                violations.append(Violation(last.k, last.ref_grid.shape[1] + s, i, j, d))
    return violations


def check_actual_collisions(trace: TraceRecord, margin, slack=1e-9):
    """Actual (disturbed) positions against the physical bound
    d_hat - 2 delta_d_min - margin, at the oversampled grid."""
    cfg = trace.scenario.config
    ti = 1.0 / np.diag(cfg.theta)
    bound = cfg.d_hat_min - 2.0 * trace.scenario.delta_d_min - margin
    violations = []
    for rec in trace.rounds:
        if rec.act_fine is None:
            continue
        for s in range(rec.act_fine.shape[1]):
            d, i, j = _pairwise_min(rec.act_fine[:, s, :], ti)
            if d < bound - slack:
                violations.append(Violation(rec.k, s, i, j, d))
    return violations


@dataclass
class OracleReport:
    tracker_truth_failures: list = field(default_factory=list)
    tracker_agreement_failures: list = field(default_factory=list)
    unplanned_fatal_rounds: list = field(default_factory=list)

    @property
    def ok(self):
        return not (self.tracker_truth_failures or self.tracker_agreement_failures
                    or self.unplanned_fatal_rounds)


def check_theorem_oracles(trace: TraceRecord) -> OracleReport:
    """Whole-run invariants.

    (a) every live tracker contains the plan its vehicle actually follows,
    (b) live trackers of the same vehicle agree across units, candidate by
    candidate, (c) every planning step either solved its program or verified
    the shifted fallback (a run that could not would have aborted; the trace
    records any fallback as an ordinary event).
    """
    report = OracleReport()
    for rec in trace.rounds:
        m = len(rec.cu_digests)
        n = len(rec.uav_digests)
        for w in range(m):
            for i in range(n):
                if rec.cu_deprecated[w][i]:
                    continue
                if rec.uav_digests[i] not in rec.cu_digests[w][i]:
                    report.tracker_truth_failures.append(
                        {"round": rec.k, "cu": w, "uav": i})
        for w in range(m):
            for v in range(w + 1, m):
                for i in range(n):
                    if rec.cu_deprecated[w][i] or rec.cu_deprecated[v][i]:
                        continue
                    if rec.cu_digests[w][i] != rec.cu_digests[v][i]:
                        report.tracker_agreement_failures.append(
                            {"round": rec.k, "cu_a": w, "cu_b": v, "uav": i})
    return report


# -- metrics ---------------------------------------------------------------------


@dataclass
class RunMetrics:
    dist_to_target: np.ndarray  # (rounds, N)
    dmin: np.ndarray  # per-round min over vehicles
    dmax: np.ndarray
    min_scaled_pairwise: np.ndarray  # per-round, over the collision grid
    settle_round: int | None
    phase_settles: list  # (start, end, settle round within phase or None)
    total_settle: int | None


def metrics(trace: TraceRecord, settle_tol=0.05) -> RunMetrics:
    cfg = trace.scenario.config
    ti = 1.0 / np.diag(cfg.theta)
    rounds = trace.n_rounds
    n = trace.scenario.n_uavs
    dist = np.empty((rounds, n))
    min_pair = np.empty(rounds)
    for r, rec in enumerate(trace.rounds):
        dist[r] = np.linalg.norm(rec.ref_state0[:, 0:3] - rec.targets, axis=1)
        best = np.inf
        for s in range(rec.ref_grid.shape[1]):
            d, _, _ = _pairwise_min(rec.ref_grid[:, s, :], ti)
            best = min(best, d)
        min_pair[r] = best

    def settle_in(lo, hi):
        ok = np.all(dist[lo:hi] <= settle_tol, axis=1)
        first = None
        for idx in range(hi - lo - 1, -1, -1):
            if ok[idx]:
                first = lo + idx
            else:
                break
        return first

    phase_settles = []
    total = 0
    any_missing = False
    for lo, hi in trace.scenario.phase_bounds():
        hi = min(hi, rounds)
        if hi <= lo:
            continue
        s = settle_in(lo, hi)
        phase_settles.append((lo, hi, s))
        if s is None:
            any_missing = True
        else:
            total += s - lo
    settle = settle_in(0, rounds)
    return RunMetrics(dist, dist.min(axis=1), dist.max(axis=1), min_pair,
                      settle, phase_settles, None if any_missing else total)


# -- intersample margin ------------------------------------------------------------


def constant_velocity_chord_bound(config):
    """Worst encroachment between two grid points for straight-line motion at
    the velocity box limit, endpoints exactly at the safety radius."""
    ti = 1.0 / np.diag(config.theta)
    v_rel = 2.0 * float(np.linalg.norm(ti * config.vel_max))
    chord = min(v_rel * config.t_c, 2.0 * config.d_hat_min)
    return config.d_hat_min - float(np.sqrt(config.d_hat_min ** 2 - (chord / 2.0) ** 2))


def estimate_continuous_margin(config, samples=2000, seed=0, jerk_scale=1.0,
                               grid=64):
    """Sampled lower estimate of the worst intersample encroachment.

    Draws admissible state and jerk pairs whose endpoints keep the safety
    radius over one collision step and reports the deepest dip of the scaled
    distance in between. Sampling can only under-estimate the true maximum.
    """
    rng = np.random.default_rng([seed, 17])
    ti = 1.0 / np.diag(config.theta)
    d_hat = config.d_hat_min
    tc = config.t_c
    taus = np.linspace(0.0, tc, grid)
    worst = 0.0
    kept = 0
    for _ in range(samples):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        rel_p0 = (direction / ti) * d_hat * rng.uniform(1.0, 1.02)
        rel_v = rng.uniform(-2, 2) * rng.standard_normal(3)
        rel_v = np.clip(rel_v, -2 * config.vel_max, 2 * config.vel_max)
        rel_a = np.clip(rng.standard_normal(3) * 2, -2 * config.acc_max, 2 * config.acc_max)
        rel_j = np.clip(rng.standard_normal(3) * 4 * jerk_scale,
                        -2 * config.jerk_max, 2 * config.jerk_max)
        p = (rel_p0[None, :] + taus[:, None] * rel_v[None, :]
             + 0.5 * taus[:, None] ** 2 * rel_a[None, :]
             + (taus[:, None] ** 3 / 6.0) * rel_j[None, :])
        scaled = np.linalg.norm(p * ti, axis=1)
        if scaled[0] < d_hat or scaled[-1] < d_hat:
            continue
        kept += 1
        worst = max(worst, d_hat - float(scaled.min()))
    return worst, kept


# -- export -----------------------------------------------------------------------


CSV_HEADER = "round,uav,ref_x,ref_y,ref_z,act_x,act_y,act_z,vel,target_dist"


def write_trace(trace: TraceRecord, outdir):
    """trace.csv has one row per (round, vehicle) sampled at the round start;
    events.jsonl carries protocol events and per-message delivery records."""
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "trace.csv")
    with open(csv_path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in trace.rounds:
            for i in range(rec.ref_state0.shape[0]):
                ref = rec.ref_state0[i, 0:3]
                act = rec.act_fine[i, 0] if rec.act_fine is not None else ref
                vel = float(np.linalg.norm(rec.ref_state0[i, 3:6]))
                td = float(np.linalg.norm(ref - rec.targets[i]))
                cells = [str(rec.k), str(i)] + [repr(float(x)) for x in ref] \
                    + [repr(float(x)) for x in act] + [repr(vel), repr(td)]
                fh.write(",".join(cells) + "\n")
    ev_path = os.path.join(outdir, "events.jsonl")
    with open(ev_path, "w") as fh:
        for ev in trace.events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
        for rec in trace.rounds:
            for d in rec.deliveries:
                fh.write(json.dumps({
                    "round": rec.k, "type": "delivery", "slot": d.slot,
                    "sender": list(d.sender), "kind": d.kind,
                    "delivered": [list(x) for x in d.delivered],
                    "lost": [list(x) for x in d.lost],
                }, sort_keys=True) + "\n")
    return csv_path, ev_path
