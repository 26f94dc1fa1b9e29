"""Per-vehicle candidate-trajectory trackers kept by each compute unit.

A tracker holds every trajectory its vehicle might currently be flying: the
carried-over plan plus any newly broadcast one, disambiguated one round later
by the metadata the vehicle reports. Critical message loss deprecates the
trackers; a deprecated tracker may no longer contain the true trajectory and
planning must stop until it is repaired.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ProtocolError
from .nominal import ReferenceTrajectory, shift, trajectories_equal


@dataclass
class InformationTracker:
    candidates: list  # ReferenceTrajectory, insertion order; index 0 is "first"
    deprecated: bool = False
    up_to_date: bool = True

    def is_singleton(self):
        return len(self.candidates) == 1


@dataclass
class TrackerBank:
    trackers: list  # one InformationTracker per vehicle id

    @property
    def n_uavs(self):
        return len(self.trackers)


def bank_from_trajectories(trajectories) -> TrackerBank:
    return TrackerBank([InformationTracker([t]) for t in trajectories])


def all_up_to_date(bank: TrackerBank) -> bool:
    return all(t.up_to_date for t in bank.trackers)


def deprecated_uavs(bank: TrackerBank):
    return [i for i, t in enumerate(bank.trackers) if t.deprecated]


def shift_all(bank: TrackerBank) -> TrackerBank:
    """Re-anchor every candidate by one round; flags are preserved."""
    return TrackerBank([
        InformationTracker([shift(c) for c in t.candidates], t.deprecated, t.up_to_date)
        for t in bank.trackers
    ])


def ingest_full_trajectory(bank: TrackerBank, uav: int, traj: ReferenceTrajectory) -> TrackerBank:
    """Replace a tracker with the vehicle's own reported plan (recovery path)."""
    trackers = list(bank.trackers)
    trackers[uav] = InformationTracker([traj], deprecated=False, up_to_date=True)
    return TrackerBank(trackers)


def _set_all_deprecated(trackers):
    return [InformationTracker(t.candidates, True, False) for t in trackers]


def update(bank: TrackerBank, uav_messages, cu_messages, m_total: int,
           strict: bool = True) -> TrackerBank:
    """One round of tracker maintenance.

    uav_messages: per-vehicle metadata reports from the last communication
    phase (None where lost). cu_messages: every payload received in a compute
    unit slot, in slot order; full-trajectory replies repair their tracker,
    trajectory broadcasts are appended as new candidates. Fewer than m_total
    slot payloads, or an unresolved multi-candidate tracker, deprecates
    everything: some vehicle may be flying a plan we never saw.

    Carried candidates are shifted here so the whole bank stays anchored at
    the current round (broadcast plans already arrive with the new anchor).

    A report that matches nothing in a live tracker breaks the protocol's
    core guarantee and raises; with strict=False (the loss-handling ablation,
    whose trackers are force-revived) it is silently ignored.
    """
    from .cu_agent import CuMessage, TrajectoryMessage  # local: avoid import cycle
    from .uav_agent import TrajectoryReply

    trackers = shift_all(bank).trackers

    for payload in cu_messages:
        if isinstance(payload, TrajectoryReply):
            trackers[payload.uav_id] = InformationTracker(
                [shift(payload.trajectory)], deprecated=False, up_to_date=True
            )

    for i, msg in enumerate(uav_messages):
        if msg is None:
            continue
        matched = None
        for cand in trackers[i].candidates:
            if cand.metadata == msg.metadata:
                matched = cand
                break
        if matched is not None:
            trackers[i] = InformationTracker([matched], deprecated=False, up_to_date=True)
        elif not trackers[i].deprecated and strict:
            raise ProtocolError(
                f"uav {i} reported metadata {msg.metadata} absent from a live tracker"
            )

    if any(len(t.candidates) > 1 for t in trackers):
        trackers = _set_all_deprecated(trackers)

    if len(cu_messages) < m_total:
        trackers = _set_all_deprecated(trackers)

    for payload in cu_messages:
        if isinstance(payload, CuMessage) and isinstance(payload.payload, TrajectoryMessage):
            i = payload.payload.uav_id
            traj = payload.payload.trajectory
            if not any(c.metadata == traj.metadata for c in trackers[i].candidates):
                trackers[i] = InformationTracker(
                    trackers[i].candidates + [traj],
                    trackers[i].deprecated,
                    trackers[i].up_to_date,
                )

    return TrackerBank(trackers)


def assume_delivery(bank: TrackerBank) -> TrackerBank:
    """Ablation used by --disable-mlr: pretend every broadcast arrived.

    Clears deprecation and collapses multi-candidate trackers to the newest
    plan, so planning continues exactly as if no message had been lost.
    """
    trackers = []
    for t in bank.trackers:
        cands = t.candidates
        if len(cands) > 1:
            newest = max(cands, key=lambda c: (c.metadata.calc_round, c.metadata.cu_id))
            cands = [newest]
        trackers.append(InformationTracker(cands, deprecated=False, up_to_date=True))
    return TrackerBank(trackers)


def banks_equal(a: TrackerBank, b: TrackerBank) -> bool:
    if a.n_uavs != b.n_uavs:
        return False
    for ta, tb in zip(a.trackers, b.trackers):
        if len(ta.candidates) != len(tb.candidates):
            return False
        for ca, cb in zip(ta.candidates, tb.candidates):
            if not trajectories_equal(ca, cb):
                return False
    return True
