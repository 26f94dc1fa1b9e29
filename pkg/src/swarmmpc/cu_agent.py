"""Compute-unit state machine.

Each round a unit refreshes its trackers from the last communication phase,
then either runs one planning step (trackers live), or spends rounds
repairing its knowledge: one silent round to flag the situation, then
alternating trajectory requests and donated slots until every tracker is
repaired. A unit never plans from a deprecated bank.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import deadlock, qp, tracker, trigger
from .errors import FatalInvariantError
from .nominal import NominalState, TrajectoryMetadata, hover_trajectory, shift
from .uav_agent import TrajectoryReply

RUN_DMPC = "RUN_DMPC"
WAIT = "WAIT"
REQUEST_TRAJECTORY = "REQUEST_TRAJECTORY"
WAIT_FOR_UPDATE = "WAIT_FOR_UPDATE"

_SLACK_ACCEPT = 1e-9  # solutions leaning on the slack are discarded
_VERIFY_TOL = 1e-9


@dataclass
class TrajectoryMessage:
    uav_id: int
    trajectory: object  # ReferenceTrajectory


@dataclass
class TrajectoryRequestMessage:
    uav_id: int
    requesting_cu: int


@dataclass
class EmptyMessage:
    pass


@dataclass
class CuMessage:
    sender: int
    payload: object  # TrajectoryMessage | TrajectoryRequestMessage | EmptyMessage
    priorities: np.ndarray | None
    intermediate_target: tuple | None = None  # (uav, position), logging only


@dataclass
class CuStepInfo:
    state: str = RUN_DMPC
    selected_uav: int | None = None
    aet: list = field(default_factory=list)
    planned_uav: int | None = None
    solver_status: str | None = None
    used_fallback: bool = False
    requested_uav: int | None = None
    silenced_by_donation: bool = False
    deadlock: bool = False
    deprecated_after_update: bool = False


class CuAgent:
    def __init__(self, cu_id, n_uavs, n_cus, config, trigger_kind,
                 initial_positions, initial_targets, seed=0,
                 soft_constraints=True, planner=True, deadlock_cfg=None,
                 disable_loss_recovery=False, solver_tol=1e-8, solver_max_iter=4000):
        self.cu_id = cu_id
        self.n_uavs = n_uavs
        self.n_cus = n_cus
        self.config = config
        self.trigger_kind = trigger_kind
        self.soft_constraints = soft_constraints
        self.planner = planner
        self.deadlock_cfg = deadlock_cfg or deadlock.DeadlockConfig()
        self.disable_loss_recovery = disable_loss_recovery
        self.solver_tol = solver_tol
        self.solver_max_iter = solver_max_iter

        hovers = [
            hover_trajectory(initial_positions[i], config.h_s, config.t_s,
                             config.round_steps, start_round=0,
                             metadata=TrajectoryMetadata(0, 0))
            for i in range(n_uavs)
        ]
        self.bank = tracker.bank_from_trajectories(hovers)
        self.state = RUN_DMPC
        self.targets = np.asarray(initial_targets, dtype=float).copy()
        self.k_calc = np.zeros(n_uavs, dtype=int)
        self.rng = np.random.default_rng([seed, 1000 + cu_id])
        self.last_priorities = None
        self.intermediate = {}
        self.expected_donations = set()
        self.donation_pending = False
        self.deadlock_rounds = 0
        self.last_info = CuStepInfo()

    # -- round step ---------------------------------------------------------

    def step(self, uav_messages, cu_payloads, k):
        """One computation phase. Returns the outbound message or None.

        uav_messages: list with one entry per vehicle (None where the status
        message was lost). cu_payloads: (slot id, payload) pairs received from
        compute-unit slots, in slot order; payloads are CuMessage objects or
        full-trajectory replies riding a donated slot.
        """
        info = CuStepInfo()
        if k > 0:
            self._update_knowledge(uav_messages, cu_payloads, k)
        info.deprecated_after_update = any(t.deprecated for t in self.bank.trackers)

        if tracker.all_up_to_date(self.bank):
            self.state = RUN_DMPC
        elif self.state == RUN_DMPC:
            self.state = WAIT
        info.state = self.state

        silenced = self.donation_pending
        self.donation_pending = False
        info.silenced_by_donation = silenced

        tx = None
        if self.state == RUN_DMPC:
            if not silenced:
                tx = self._dmpc_step(cu_payloads, k, info)
        elif self.state == WAIT:
            tx = CuMessage(self.cu_id, EmptyMessage(), self.last_priorities)
            self.state = REQUEST_TRAJECTORY
        elif self.state == REQUEST_TRAJECTORY:
            requested = tracker.deprecated_uavs(self.bank)[0]
            info.requested_uav = requested
            tx = CuMessage(self.cu_id, TrajectoryRequestMessage(requested, self.cu_id),
                           self.last_priorities)
            self.donation_pending = True
            self.state = WAIT_FOR_UPDATE
        elif self.state == WAIT_FOR_UPDATE:
            self.state = REQUEST_TRAJECTORY

        if tx is not None and tx.priorities is None:
            raise AssertionError("non-silent message without priorities")
        self.last_info = info
        return tx

    # -- internals ----------------------------------------------------------

    def _update_knowledge(self, uav_messages, cu_payloads, k):
        missing_donated = self.expected_donations - {slot for slot, _ in cu_payloads}
        m_total = self.n_cus - len(missing_donated)
        payloads = [p for _, p in cu_payloads]
        self.bank = tracker.update(self.bank, uav_messages, payloads, m_total,
                                   strict=not self.disable_loss_recovery)
        if self.disable_loss_recovery:
            self.bank = tracker.assume_delivery(self.bank)

        for msg in uav_messages:
            if msg is not None:
                self.targets[msg.sender] = msg.target
        for _, p in cu_payloads:
            if isinstance(p, CuMessage) and isinstance(p.payload, TrajectoryMessage):
                meta = p.payload.trajectory.metadata
                self.k_calc[p.payload.uav_id] = max(self.k_calc[p.payload.uav_id],
                                                    meta.calc_round)
            elif isinstance(p, TrajectoryReply):
                meta = p.trajectory.metadata
                self.k_calc[p.uav_id] = max(self.k_calc[p.uav_id], meta.calc_round)

        self.expected_donations = {
            slot for slot, p in cu_payloads
            if isinstance(p, CuMessage) and isinstance(p.payload, TrajectoryRequestMessage)
        }

    def _dmpc_step(self, cu_payloads, k, info):
        vectors = [p.priorities for _, p in cu_payloads
                   if isinstance(p, CuMessage) and p.priorities is not None]
        if not vectors:
            # round 0, or every populated slot carried a reply
            vectors = [self._own_priorities(k, set(), set())]
        fused = trigger.consensus(vectors)
        own_uav, aet = trigger.select(fused, self.n_cus, k, self.cu_id)
        info.selected_uav = own_uav
        info.aet = list(aet)

        dl = False
        if self.planner:
            raw = deadlock.detect(self.bank, self.targets, self.deadlock_cfg)
            # the velocity test also fires at a clean target switch (swarm at
            # rest, suddenly off target); only a persistent stall counts
            self.deadlock_rounds = self.deadlock_rounds + 1 if raw else 0
            dl = self.deadlock_rounds >= 3
            if not dl:
                self.intermediate.clear()
        info.deadlock = dl
        dl_set = self._deadlocked_set() if dl else set()

        payload = EmptyMessage()
        just_recomputed = set()
        im_log = None
        if fused[own_uav] > 0 and self.bank.trackers[own_uav].is_singleton():
            new_traj, used_fallback, status = self._plan(own_uav, aet, dl, k)
            payload = TrajectoryMessage(own_uav, new_traj)
            self.k_calc[own_uav] = k
            just_recomputed = {own_uav}
            info.planned_uav = own_uav
            info.solver_status = status
            info.used_fallback = used_fallback
            if own_uav in self.intermediate:
                im_log = (own_uav, self.intermediate[own_uav].copy())

        prios = self._own_priorities(k, just_recomputed, dl_set)
        self.last_priorities = prios
        return CuMessage(self.cu_id, payload, prios, intermediate_target=im_log)

    def _own_priorities(self, k, just_recomputed, dl_set):
        return trigger.compute_priorities(
            self.trigger_kind, self.bank, self.targets, k, self.k_calc,
            just_recomputed, dl_set,
        )

    def _deadlocked_set(self):
        out = set()
        for i, t in enumerate(self.bank.trackers):
            pos = t.candidates[0].initial_state.position
            if np.linalg.norm(self.targets[i] - pos) > self.deadlock_cfg.target_tolerance:
                out.add(i)
        return out

    def _plan(self, uav, aet, dl, k):
        cfg = self.config
        own_traj = self.bank.trackers[uav].candidates[0]
        states = [t.candidates[0].initial_state for t in self.bank.trackers]

        target_pos = self.targets[uav]
        if self.planner and dl:
            im = deadlock.make_room(uav, states, self.targets, self.deadlock_cfg, self.rng)
            if im is not None:
                self.intermediate[uav] = im.position
            else:
                self.intermediate.pop(uav, None)
        if uav in self.intermediate:
            target_pos = self.intermediate[uav]
        target = NominalState.at_rest(np.clip(target_pos, cfg.pos_min, cfg.pos_max))

        halfspaces = qp.collect_halfspaces(uav, own_traj, self.bank, aet, cfg)
        slack_weight = None
        if self.soft_constraints:
            j_near = self._nearest_other(uav, states)
            if j_near is not None:
                slack_weight = deadlock.right_side_weight(uav, j_near, states, cfg)
            else:
                slack_weight = cfg.soft_weight_base

        problem = qp.build_problem(uav, own_traj, self.bank, aet, target, cfg,
                                   soft=self.soft_constraints, slack_weight=slack_weight,
                                   halfspaces=halfspaces)
        sol = qp.solve(problem, tol=self.solver_tol, max_iter=self.solver_max_iter)

        if sol.status == qp.OPTIMAL:
            slack_ok = (not self.soft_constraints) or sol.x[-1] <= _SLACK_ACCEPT
            if slack_ok:
                cand = qp.solution_trajectory(sol.x, own_traj, cfg, k, self.cu_id)
                if qp.verify_candidate(cand, halfspaces, cfg, tol=_VERIFY_TOL):
                    return cand, False, sol.status

        fallback = dc_replace(shift(own_traj), metadata=TrajectoryMetadata(k, self.cu_id))
        if qp.verify_candidate(fallback, halfspaces, cfg, tol=_VERIFY_TOL):
            return fallback, True, sol.status
        raise FatalInvariantError(
            f"round {k}, cu {self.cu_id}, uav {uav}: program {sol.status} and the "
            "shifted candidate failed verification"
        )

    def _nearest_other(self, uav, states):
        best = None
        p = states[uav].position
        for j in range(self.n_uavs):
            if j == uav:
                continue
            d = float(np.linalg.norm(states[j].position - p))
            if best is None or d < best[0]:
                best = (d, j)
        return best[1] if best else None
