"""Deadlock handling: detection, make-room targets and side-dependent slack
weighting.

A deadlock is the swarm at near rest with someone still away from its target.
The resolution has three parts: deadlocked vehicles get the lowest nonzero
trigger priority (replanning them as-is changes nothing), the planner hands
out intermediate targets that step aside for the closest conflicting
neighbor, and the slack penalty is raised against neighbors on the right so
symmetric standoffs resolve by rotation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DeadlockConfig:
    velocity_threshold: float = 0.05  # m/s, below this the swarm counts as at rest
    target_tolerance: float = 0.05  # m
    make_room_radius: float = 1.0  # m, neighborhood that can demand room
    push_distance: float = 0.5  # m, sidestep length
    noise_scale: float = 0.1  # m, symmetry-breaking noise

    def __post_init__(self):
        for name in ("velocity_threshold", "target_tolerance", "make_room_radius",
                     "push_distance", "noise_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class IntermediateTarget:
    uav: int
    position: np.ndarray
    active: bool = True


def detect(bank, targets, cfg: DeadlockConfig) -> bool:
    """All reference velocities below threshold while someone is off target."""
    off_target = False
    for i, t in enumerate(bank.trackers):
        state = t.candidates[0].initial_state
        if float(np.linalg.norm(state.velocity)) >= cfg.velocity_threshold:
            return False
        if float(np.linalg.norm(np.asarray(targets[i], float) - state.position)) > cfg.target_tolerance:
            off_target = True
    return off_target


def _between(p_i, p_j, target_j, lateral_tol):
    """Is p_i near the segment from p_j to j's target (within lateral_tol)?"""
    seg = np.asarray(target_j, float) - p_j
    seg_len = float(np.linalg.norm(seg))
    if seg_len < 1e-9:
        return False
    s = float(np.dot(p_i - p_j, seg)) / (seg_len * seg_len)
    if s < 0.0 or s > 1.0:
        return False
    foot = p_j + s * seg
    return float(np.linalg.norm(p_i - foot)) <= lateral_tol


def make_room(i, states, targets, cfg: DeadlockConfig, rng, lateral_tol=0.25):
    """Decide whether vehicle i should step aside, and where to.

    A neighbor j qualifies when it is within the make-room radius, is not
    closer to its own target than i is to its target, and i is either moving
    toward j or sits between j and j's target. The sidestep points away from
    the closest qualifying neighbor, with noise to break symmetric standoffs.
    Returns None when no neighbor qualifies (i keeps its true target).
    """
    p_i = states[i].position
    v_i = states[i].velocity
    d_i = float(np.linalg.norm(np.asarray(targets[i], float) - p_i))
    best = None
    for j in range(len(states)):
        if j == i:
            continue
        p_j = states[j].position
        gap = float(np.linalg.norm(p_i - p_j))
        if gap > cfg.make_room_radius:
            continue
        d_j = float(np.linalg.norm(np.asarray(targets[j], float) - p_j))
        if d_j < d_i:
            continue
        moving_toward = float(np.dot(v_i, p_j - p_i)) > 0.0
        if not (moving_toward or _between(p_i, p_j, targets[j], lateral_tol)):
            continue
        if best is None or gap < best[0]:
            best = (gap, j)
    if best is None:
        return None
    j = best[1]
    away = p_i - states[j].position
    nrm = float(np.linalg.norm(away))
    direction = away / nrm if nrm > 1e-9 else np.array([1.0, 0.0, 0.0])
    pos = p_i + cfg.push_distance * direction + cfg.noise_scale * rng.standard_normal(3)
    return IntermediateTarget(uav=i, position=pos, active=True)


def right_side_weight(i, j, states, opt_cfg) -> float:
    """Slack weight for the pair (i, j): boosted when j sits in the right
    half-space of i's heading (world z up; ties and near rest use the base)."""
    v = states[i].velocity
    if float(np.linalg.norm(v)) < 1e-6:
        return opt_cfg.soft_weight_base
    rel = states[j].position - states[i].position
    if float(np.cross(v, rel)[2]) < -1e-12:
        return opt_cfg.soft_weight_right
    return opt_cfg.soft_weight_base
