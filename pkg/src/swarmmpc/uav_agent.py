"""Vehicle-side behavior.

A vehicle adopts the plan broadcast for it (or keeps shifting its old one),
reports the metadata of whatever it currently flies, and answers trajectory
requests by sending its full plan in the requesting unit's slot. Tracking of
the reference by the real vehicle is abstracted to a bounded disturbance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nominal import (
    NominalState,
    ReferenceTrajectory,
    TrajectoryMetadata,
    hover_trajectory,
    sample,
    shift,
)


@dataclass
class UavMessage:
    sender: int
    metadata: TrajectoryMetadata  # of the currently followed plan
    target: np.ndarray
    measured_position: np.ndarray | None = None  # logging only


@dataclass
class TrajectoryReply:
    """Full plan sent by a vehicle into a donated compute-unit slot."""

    uav_id: int
    trajectory: ReferenceTrajectory


class TrackingModel:
    """Bounded-error tracking: the real position stays within delta_d_min of
    the reference. The disturbance is a smooth seeded multisine scaled into
    that ball; only the bound matters, the shape is cosmetic."""

    def __init__(self, delta_d_min: float, seed: int = 0):
        self.delta_d_min = float(delta_d_min)
        self.seed = int(seed)
        self._params = {}

    def _params_for(self, uav_id):
        p = self._params.get(uav_id)
        if p is None:
            rng = np.random.default_rng([self.seed, 7919, uav_id])
            omega = rng.uniform(0.3, 2.0, size=(3, 2)) * 2 * np.pi
            phase = rng.uniform(0, 2 * np.pi, size=(3, 2))
            w = rng.uniform(0.3, 1.0, size=(3, 2))
            w = w / w.sum(axis=1, keepdims=True)
            p = (omega, phase, w)
            self._params[uav_id] = p
        return p

    def disturbance(self, uav_id: int, t: float) -> np.ndarray:
        if self.delta_d_min == 0.0:
            return np.zeros(3)
        omega, phase, w = self._params_for(uav_id)
        comp = (w * np.sin(omega * t + phase)).sum(axis=1)  # each in [-1, 1]
        return (self.delta_d_min / np.sqrt(3.0)) * comp


class UavAgent:
    def __init__(self, uav_id, initial_position, target, horizon_steps, sampling_time, round_steps):
        self.uav_id = uav_id
        self.current = hover_trajectory(
            initial_position, horizon_steps, sampling_time, round_steps,
            start_round=0, metadata=TrajectoryMetadata(0, 0),
        )
        self.target = np.asarray(target, dtype=float).copy()
        self.pending_replies: list[int] = []

    def on_round_start(self, cu_payloads, k):
        """Process the previous communication phase at the round boundary.

        Adopt a plan broadcast for this vehicle, otherwise shift the old one;
        remember any trajectory requests so the next emission answers them.
        With several plans addressed to us (only possible when loss handling
        is ablated) the lowest unit id wins, deterministically.
        """
        from .cu_agent import CuMessage, TrajectoryMessage, TrajectoryRequestMessage

        adopted = None
        for payload in cu_payloads:
            if not isinstance(payload, CuMessage):
                continue
            inner = payload.payload
            if isinstance(inner, TrajectoryMessage) and inner.uav_id == self.uav_id:
                if adopted is None or payload.sender < adopted[0]:
                    adopted = (payload.sender, inner.trajectory)
            elif isinstance(inner, TrajectoryRequestMessage) and inner.uav_id == self.uav_id:
                if inner.requesting_cu not in self.pending_replies:
                    self.pending_replies.append(inner.requesting_cu)
        if adopted is not None:
            self.current = adopted[1]
        else:
            self.current = shift(self.current)
        self.pending_replies.sort()

    def emit(self, measured_position=None):
        """Status message for the own slot plus one full-plan reply per
        donated slot."""
        msg = UavMessage(self.uav_id, self.current.metadata, self.target.copy(),
                         measured_position)
        replies = [(cu, TrajectoryReply(self.uav_id, self.current)) for cu in self.pending_replies]
        self.pending_replies = []
        return msg, replies

    def reference_state(self, tau: float = 0.0) -> NominalState:
        return sample(self.current, tau)

    def actual_position(self, tracking: TrackingModel, t: float) -> np.ndarray:
        """Reference position at absolute time t plus the tracking error."""
        tau = t - self.current.start_round * self.current.round_period
        if tau < 0:
            raise ValueError("t precedes the current round")
        ref = sample(self.current, tau).position
        return ref + tracking.disturbance(self.uav_id, t)
