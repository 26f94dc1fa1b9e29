"""Triple-integrator reference trajectories.

A planned trajectory is a piecewise-constant jerk profile on a fixed sampling
grid, anchored to the communication round at which the vehicle starts flying
it. State updates use the exact closed form of the triple integrator, so
resampling and round-shifting introduce no integration error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import rollout

_GRID_NUDGE = 1e-9  # relative nudge so grid-aligned times land on their node


@dataclass(frozen=True)
class NominalState:
    """Position (m), velocity (m/s) and acceleration (m/s^2), each a 3-vector."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def as_vector(self):
        return np.concatenate([self.position, self.velocity, self.acceleration])

    @staticmethod
    def from_vector(x) -> "NominalState":
        x = np.asarray(x, dtype=float)
        return NominalState(x[0:3].copy(), x[3:6].copy(), x[6:9].copy())

    @staticmethod
    def at_rest(position) -> "NominalState":
        return NominalState(np.asarray(position, dtype=float).copy(), np.zeros(3), np.zeros(3))


def propagate(state: NominalState, jerk, dt: float) -> NominalState:
    """Advance the state by dt seconds under a constant jerk (closed form)."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    u = np.asarray(jerk, dtype=float)
    p, v, a = state.position, state.velocity, state.acceleration
    return NominalState(
        p + dt * v + 0.5 * dt * dt * a + (dt * dt * dt / 6.0) * u,
        v + dt * a + 0.5 * dt * dt * u,
        a + dt * u,
    )


def terminal_rest(state: NominalState, tol: float = 0.0) -> bool:
    """True when velocity and acceleration vanish (exactly by default)."""
    if tol == 0.0:
        return bool(np.all(state.velocity == 0.0) and np.all(state.acceleration == 0.0))
    return bool(
        np.max(np.abs(state.velocity)) <= tol and np.max(np.abs(state.acceleration)) <= tol
    )


@dataclass(frozen=True)
class TrajectoryMetadata:
    """Identifies a plan within a run: the round it was computed in and the
    compute unit that produced it. cu_id 0 is reserved for the initial hover
    profile every vehicle starts with."""

    calc_round: int
    cu_id: int


@dataclass
class InputSequence:
    jerks: np.ndarray  # (h_s, 3) constant-jerk steps, m/s^3
    sampling_time: float  # step length T_s, seconds


@dataclass
class ReferenceTrajectory:
    """A jerk plan anchored at ``start_round``.

    ``initial_state`` is the state at the instant the vehicle adopts the plan
    (one round after it was computed). ``round_steps`` is how many jerk steps
    one communication round consumes; shifting drops that many from the front.
    """

    start_round: int
    initial_state: NominalState
    inputs: InputSequence
    metadata: TrajectoryMetadata
    round_steps: int
    _nodes: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def horizon_steps(self) -> int:
        return self.inputs.jerks.shape[0]

    @property
    def horizon_time(self) -> float:
        return self.horizon_steps * self.inputs.sampling_time

    @property
    def round_period(self) -> float:
        return self.round_steps * self.inputs.sampling_time

    def nodes(self) -> np.ndarray:
        """States on the jerk grid, shape (horizon_steps + 1, 9). Cached."""
        if self._nodes is None:
            self._nodes = rollout(
                self.initial_state.as_vector(),
                np.ascontiguousarray(self.inputs.jerks, dtype=float),
                float(self.inputs.sampling_time),
            )
        return self._nodes

    def terminal_state(self) -> NominalState:
        return NominalState.from_vector(self.nodes()[self.horizon_steps])


def sample(traj: ReferenceTrajectory, tau: float) -> NominalState:
    """State at time tau past the trajectory's anchor.

    Past the end of the horizon the terminal state is held constant, which is
    an actual rest state for every planner-produced trajectory.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    dt = traj.inputs.sampling_time
    nodes = traj.nodes()
    h = traj.horizon_steps
    m = int(np.floor(tau / dt + _GRID_NUDGE))
    if m >= h:
        return NominalState.from_vector(nodes[h])
    rem = tau - m * dt
    if rem <= 0.0:
        return NominalState.from_vector(nodes[m])
    return propagate(NominalState.from_vector(nodes[m]), traj.inputs.jerks[m], rem)


def shift(traj: ReferenceTrajectory) -> ReferenceTrajectory:
    """Re-anchor the trajectory one round later.

    Drops the first round worth of jerk steps, advances the initial state
    through them, and pads zeros at the tail. Because planner trajectories end
    at rest, the padding continues the plan consistently. Metadata is kept:
    the shifted plan is the same plan, seen one round later.
    """
    s = traj.round_steps
    h = traj.horizon_steps
    nodes = traj.nodes()
    new_jerks = np.zeros_like(traj.inputs.jerks)
    new_jerks[: h - s] = traj.inputs.jerks[s:]
    return ReferenceTrajectory(
        start_round=traj.start_round + 1,
        initial_state=NominalState.from_vector(nodes[s]),
        inputs=InputSequence(new_jerks, traj.inputs.sampling_time),
        metadata=traj.metadata,
        round_steps=s,
    )


def hover_trajectory(
    position,
    horizon_steps: int,
    sampling_time: float,
    round_steps: int,
    start_round: int = 0,
    metadata: TrajectoryMetadata = TrajectoryMetadata(0, 0),
) -> ReferenceTrajectory:
    """Constant hover at a fixed position; the standard initial plan."""
    return ReferenceTrajectory(
        start_round=start_round,
        initial_state=NominalState.at_rest(position),
        inputs=InputSequence(np.zeros((horizon_steps, 3)), float(sampling_time)),
        metadata=metadata,
        round_steps=round_steps,
    )


def trajectories_equal(a: ReferenceTrajectory, b: ReferenceTrajectory) -> bool:
    """Exact content equality (metadata, anchor, initial state and inputs)."""
    return (
        a.metadata == b.metadata
        and a.start_round == b.start_round
        and a.round_steps == b.round_steps
        and a.inputs.sampling_time == b.inputs.sampling_time
        and np.array_equal(a.initial_state.as_vector(), b.initial_state.as_vector())
        and np.array_equal(a.inputs.jerks, b.inputs.jerks)
    )
