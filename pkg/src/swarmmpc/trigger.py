"""Distributed event trigger.

Every compute unit scores all vehicles, quantizes the scores to one byte,
broadcasts them, and fuses the received vectors with an element-wise maximum
that a zero overrides (zero marks a vehicle replanned one round ago, whose
score is stale). Because every unit fuses the same data, they derive the same
top-M set and pick distinct members of it by their round-offset slot.
"""
from __future__ import annotations

import numpy as np

from .errors import ProtocolError

RR = "rr"  # round-robin: rounds since last replan
DT = "dt"  # distance to target
HT = "ht"  # product of both

TRIGGER_KINDS = (RR, DT, HT)

# quantization steps: 0.01 m for the pure distance trigger (coarser buckets
# tie a final-approach straggler with parked vehicles, and the id tie-break
# then starves the higher ids), 0.1 m-rounds for the hybrid whose age factor
# separates those ties on its own
_DIST_SCALE = {DT: 100.0, HT: 10.0}


def quantize(raw, kind):
    """Map raw scores to uint8. Distance-based scores never quantize a
    positive value to zero; zero keeps its scheduling meaning."""
    raw = np.asarray(raw, dtype=float)
    if kind == RR:
        vals = np.clip(np.rint(raw), 0, 255)
    else:
        vals = np.clip(np.rint(raw * _DIST_SCALE[kind]), 1, 255)
        vals[raw == 0.0] = 0
    return vals.astype(np.uint8)


def compute_priorities(kind, bank, targets, k, last_calc, just_recomputed, deadlocked):
    """Score every vehicle from the tracker bank.

    last_calc[i] is the last round vehicle i was replanned. Vehicles replanned
    by this unit in the current round are forced to zero (their fresh state is
    not reflected yet); vehicles sitting in a detected deadlock are forced to
    one, since replanning them changes nothing.
    """
    if kind not in TRIGGER_KINDS:
        raise ValueError(f"unknown trigger kind {kind!r}")
    if any(t.deprecated for t in bank.trackers):
        raise ProtocolError("priorities computed on a deprecated bank")
    n = bank.n_uavs
    raw = np.zeros(n)
    for i in range(n):
        first = bank.trackers[i].candidates[0]
        dist = float(np.linalg.norm(np.asarray(targets[i], float) - first.initial_state.position))
        age = float(k - last_calc[i])
        if kind == RR:
            raw[i] = age
        elif kind == DT:
            raw[i] = dist
        else:
            raw[i] = dist * age
    vals = quantize(raw, kind)
    for i in just_recomputed:
        vals[i] = 0
    for i in deadlocked:
        vals[i] = 1
    return vals


def consensus(received):
    """Element-wise fusion: zero if any contributor says zero, else maximum."""
    if not received:
        raise ValueError("consensus needs at least one priority vector")
    stack = np.stack([np.asarray(v, dtype=np.uint8) for v in received])
    fused = stack.max(axis=0)
    fused[(stack == 0).any(axis=0)] = 0
    return fused


def select(priorities, m, k, w):
    """Top-M vehicles by fused priority (ties to the lower id) and this
    unit's pick: position (k + w) mod M of that list."""
    n = len(priorities)
    if n < m:
        raise ValueError("need at least M vehicles")
    order = sorted(range(n), key=lambda i: (-int(priorities[i]), i))
    aet = order[:m]
    return aet[(k + w) % m], aet
