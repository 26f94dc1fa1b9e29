"""Round-based many-to-all broadcast with per-receiver loss and jamming.

One communication phase delivers every occupied slot to every node, each
(envelope, receiver) pair independently with probability 1 - p, except that
jammed nodes receive nothing while still transmitting, and a sender always
holds its own message. Draws come from a per-round seeded stream consumed in
a fixed (slot, receiver) order regardless of slot occupancy, so delivery
patterns are reproducible bit for bit.

This module also owns the wire format: every payload crossing the network is
a self-describing binary blob that round-trips losslessly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .cu_agent import CuMessage, EmptyMessage, TrajectoryMessage, TrajectoryRequestMessage
from .errors import ProtocolError
from .nominal import InputSequence, NominalState, ReferenceTrajectory, TrajectoryMetadata
from .uav_agent import TrajectoryReply, UavMessage

_TAG_UAV = 1
_TAG_CU = 2
_TAG_REPLY = 3
_PAYLOAD_EMPTY = 0
_PAYLOAD_TRAJECTORY = 1
_PAYLOAD_REQUEST = 2


# -- schedule, loss, envelopes ------------------------------------------------


@dataclass
class RoundSchedule:
    """Slot plan of one round: all vehicle slots first, then the unit slots.
    Timing fields are bookkeeping; the simulator advances in whole rounds."""

    n_uavs: int
    n_cus: int
    round_period: float = 0.2
    t_calc: float = 0.105
    t_com: float = 0.095

    def __post_init__(self):
        if abs(self.t_calc + self.t_com - self.round_period) > 1e-12:
            raise ValueError("round_period must equal t_calc + t_com")

    @property
    def n_slots(self):
        return self.n_uavs + self.n_cus

    def slot_of(self, kind, ident):
        return ident if kind == "uav" else self.n_uavs + ident

    def nodes(self):
        return [("uav", i) for i in range(self.n_uavs)] + [("cu", w) for w in range(self.n_cus)]


@dataclass
class JamWindow:
    start: int
    end: int | None  # exclusive; None jams forever
    nodes: tuple  # ("uav"|"cu", id) pairs

    def active(self, k, node):
        if k < self.start:
            return False
        if self.end is not None and k >= self.end:
            return False
        return node in self.nodes


@dataclass
class LossModel:
    loss_prob: float = 0.0
    jams: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")

    def jammed(self, k, node):
        return any(j.active(k, node) for j in self.jams)


@dataclass
class Envelope:
    slot: int
    sender: tuple  # ("uav"|"cu", id)
    payload: bytes


@dataclass
class DeliveryRecord:
    slot: int
    sender: tuple
    kind: str
    delivered: list
    lost: list


def run_round(k, envelopes, loss: LossModel, schedule: RoundSchedule):
    """Deliver one communication phase.

    Returns (received, log): received maps each node to its envelope list in
    slot order, log records the fate of every (envelope, receiver) pair.
    """
    by_slot = {}
    for env in envelopes:
        if env.slot in by_slot:
            raise ProtocolError(f"slot {env.slot} claimed twice in round {k}")
        if not 0 <= env.slot < schedule.n_slots:
            raise ProtocolError(f"slot {env.slot} out of range")
        by_slot[env.slot] = env

    nodes = schedule.nodes()
    rng = np.random.default_rng([loss.seed, 2,  k])
    draws = rng.random((schedule.n_slots, len(nodes)))

    received = {node: [] for node in nodes}
    log = []
    for slot in range(schedule.n_slots):
        env = by_slot.get(slot)
        if env is None:
            continue
        rec = DeliveryRecord(slot, env.sender, payload_kind(env.payload), [], [])
        for r, node in enumerate(nodes):
            if node == env.sender:
                ok = True
            elif loss.jammed(k, node):
                ok = False
            else:
                ok = draws[slot, r] >= loss.loss_prob
            if ok:
                received[node].append(env)
                rec.delivered.append(node)
            else:
                rec.lost.append(node)
        log.append(rec)
    return received, log


# -- wire format ---------------------------------------------------------------


def _pack_vec(buf, vec, n):
    buf += struct.pack(f"<{n}d", *np.asarray(vec, dtype=float).reshape(n))


def _pack_trajectory(buf, traj: ReferenceTrajectory):
    buf += struct.pack("<iidii", traj.start_round, traj.round_steps,
                       traj.inputs.sampling_time, traj.metadata.calc_round,
                       traj.metadata.cu_id)
    _pack_vec(buf, traj.initial_state.as_vector(), 9)
    h = traj.horizon_steps
    buf += struct.pack("<i", h)
    _pack_vec(buf, traj.inputs.jerks, 3 * h)


def _unpack_trajectory(data, off):
    start_round, round_steps, t_s, calc_round, cu_id = struct.unpack_from("<iidii", data, off)
    off += struct.calcsize("<iidii")
    init = np.array(struct.unpack_from("<9d", data, off))
    off += 72
    (h,) = struct.unpack_from("<i", data, off)
    off += 4
    jerks = np.array(struct.unpack_from(f"<{3 * h}d", data, off)).reshape(h, 3)
    off += 24 * h
    traj = ReferenceTrajectory(
        start_round=start_round,
        initial_state=NominalState.from_vector(init),
        inputs=InputSequence(jerks, t_s),
        metadata=TrajectoryMetadata(calc_round, cu_id),
        round_steps=round_steps,
    )
    return traj, off


def encode(message) -> bytes:
    buf = bytearray()
    if isinstance(message, UavMessage):
        buf += struct.pack("<Biii", _TAG_UAV, message.sender,
                           message.metadata.calc_round, message.metadata.cu_id)
        _pack_vec(buf, message.target, 3)
        if message.measured_position is None:
            buf += struct.pack("<B", 0)
        else:
            buf += struct.pack("<B", 1)
            _pack_vec(buf, message.measured_position, 3)
    elif isinstance(message, TrajectoryReply):
        buf += struct.pack("<Bi", _TAG_REPLY, message.uav_id)
        _pack_trajectory(buf, message.trajectory)
    elif isinstance(message, CuMessage):
        inner = message.payload
        if isinstance(inner, EmptyMessage):
            kind = _PAYLOAD_EMPTY
        elif isinstance(inner, TrajectoryMessage):
            kind = _PAYLOAD_TRAJECTORY
        elif isinstance(inner, TrajectoryRequestMessage):
            kind = _PAYLOAD_REQUEST
        else:
            raise ProtocolError(f"unknown payload {type(inner).__name__}")
        buf += struct.pack("<BiB", _TAG_CU, message.sender, kind)
        if message.priorities is None:
            buf += struct.pack("<H", 0)
        else:
            prios = np.asarray(message.priorities, dtype=np.uint8)
            buf += struct.pack("<H", len(prios))
            buf += prios.tobytes()
        if kind == _PAYLOAD_TRAJECTORY:
            buf += struct.pack("<i", inner.uav_id)
            _pack_trajectory(buf, inner.trajectory)
        elif kind == _PAYLOAD_REQUEST:
            buf += struct.pack("<ii", inner.uav_id, inner.requesting_cu)
        if message.intermediate_target is None:
            buf += struct.pack("<B", 0)
        else:
            uav, pos = message.intermediate_target
            buf += struct.pack("<Bi", 1, uav)
            _pack_vec(buf, pos, 3)
    else:
        raise ProtocolError(f"cannot encode {type(message).__name__}")
    return bytes(buf)


def decode(data: bytes):
    (tag,) = struct.unpack_from("<B", data, 0)
    if tag == _TAG_UAV:
        sender, calc_round, cu_id = struct.unpack_from("<iii", data, 1)
        off = 13
        target = np.array(struct.unpack_from("<3d", data, off))
        off += 24
        (has_meas,) = struct.unpack_from("<B", data, off)
        off += 1
        measured = None
        if has_meas:
            measured = np.array(struct.unpack_from("<3d", data, off))
            off += 24
        return UavMessage(sender, TrajectoryMetadata(calc_round, cu_id), target, measured)
    if tag == _TAG_REPLY:
        (uav_id,) = struct.unpack_from("<i", data, 1)
        traj, _ = _unpack_trajectory(data, 5)
        return TrajectoryReply(uav_id, traj)
    if tag == _TAG_CU:
        sender, kind = struct.unpack_from("<iB", data, 1)
        off = 6
        (n_prio,) = struct.unpack_from("<H", data, off)
        off += 2
        priorities = None
        if n_prio:
            priorities = np.frombuffer(data, dtype=np.uint8, count=n_prio, offset=off).copy()
            off += n_prio
        if kind == _PAYLOAD_EMPTY:
            payload = EmptyMessage()
        elif kind == _PAYLOAD_TRAJECTORY:
            (uav_id,) = struct.unpack_from("<i", data, off)
            off += 4
            traj, off = _unpack_trajectory(data, off)
            payload = TrajectoryMessage(uav_id, traj)
        elif kind == _PAYLOAD_REQUEST:
            uav_id, req_cu = struct.unpack_from("<ii", data, off)
            off += 8
            payload = TrajectoryRequestMessage(uav_id, req_cu)
        else:
            raise ProtocolError(f"unknown payload kind {kind}")
        (has_im,) = struct.unpack_from("<B", data, off)
        off += 1
        im = None
        if has_im:
            (uav,) = struct.unpack_from("<i", data, off)
            off += 4
            im = (uav, np.array(struct.unpack_from("<3d", data, off)))
            off += 24
        return CuMessage(sender, payload, priorities, im)
    raise ProtocolError(f"unknown message tag {tag}")


def payload_kind(data: bytes) -> str:
    tag = data[0]
    if tag == _TAG_UAV:
        return "uav_status"
    if tag == _TAG_REPLY:
        return "trajectory_reply"
    if tag == _TAG_CU:
        kind = data[5]
        return {_PAYLOAD_EMPTY: "cu_empty", _PAYLOAD_TRAJECTORY: "cu_trajectory",
                _PAYLOAD_REQUEST: "cu_request"}[kind]
    return "unknown"
