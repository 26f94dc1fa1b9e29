"""Experiment configurations: swarm geometry, target scripts and knobs.

A scenario pins everything a run needs: initial hover positions (which must
already be mutually safe in the scaled metric), a script of target sets keyed
by round, the trigger kind, the loss model and all tolerances. Builders cover
the standard maneuvers; arbitrary setups load from a key = value text file.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .deadlock import DeadlockConfig
from .netsim import JamWindow
from .qp import OptimizationConfig, default_config

SCENARIO_NAMES = ("circle-exchange", "random-targets", "formations", "cross-exchange")


@dataclass
class Scenario:
    name: str
    n_uavs: int
    n_cus: int
    rounds: int
    initial_positions: np.ndarray  # (N, 3)
    target_script: list  # (round, (N, 3) targets), sorted, first entry at round 0
    trigger: str = "ht"
    loss_prob: float = 0.0
    jams: tuple = ()
    seed: int = 0
    delta_d_min: float = 0.05
    soft_constraints: bool = True
    planner: bool = True
    disable_mlr: bool = False
    config: OptimizationConfig = None
    deadlock_cfg: DeadlockConfig = field(default_factory=DeadlockConfig)

    def __post_init__(self):
        if self.config is None:
            self.config = default_config()
        self.initial_positions = np.asarray(self.initial_positions, dtype=float)
        self.target_script = sorted(
            [(int(r), np.asarray(t, dtype=float)) for r, t in self.target_script]
        )
        if not self.target_script or self.target_script[0][0] != 0:
            raise ValueError("target_script must start at round 0")
        if self.n_uavs < self.n_cus:
            raise ValueError("need at least as many vehicles as compute units")
        if self.n_cus < 1:
            raise ValueError("need at least one compute unit")
        validate_separation(self.initial_positions, self.config.theta, self.config.d_hat_min)
        lo, hi = self.config.pos_min, self.config.pos_max
        if np.any(self.initial_positions < lo) or np.any(self.initial_positions > hi):
            raise ValueError("initial positions outside the flight volume")

    def targets_at(self, k):
        current = self.target_script[0][1]
        for r, t in self.target_script:
            if r <= k:
                current = t
            else:
                break
        return current

    def phase_bounds(self):
        starts = [r for r, _ in self.target_script]
        return list(zip(starts, starts[1:] + [self.rounds]))


def validate_separation(points, theta, d_min, factor=1.0):
    ti = 1.0 / np.diag(theta)
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.linalg.norm(ti * (pts[i] - pts[j])))
            if d < d_min * factor:
                raise ValueError(
                    f"points {i} and {j} are {d:.3f} m apart in the scaled metric "
                    f"(need {d_min * factor:.3f})"
                )
    return pts


# -- geometry ------------------------------------------------------------------


def _circle_points(n, radius, z, center=(0.0, 0.0)):
    ang = 2 * np.pi * np.arange(n) / n
    pts = np.stack([center[0] + radius * np.cos(ang),
                    center[1] + radius * np.sin(ang),
                    np.full(n, float(z))], axis=1)
    return pts


def _plane_points(n, spacing=0.7, z=1.2):
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    pts = []
    for i in range(n):
        r, c = divmod(i, cols)
        pts.append([(c - (cols - 1) / 2) * spacing, (r - (rows - 1) / 2) * spacing, z])
    return np.asarray(pts)


def _pyramid_points(n, z_base=0.7, z_top=1.7):
    base = max(n - n // 2, 1)
    top = n - base
    pts = list(_circle_points(base, 1.0, z_base))
    if top:
        pts += list(_circle_points(top, 0.5, z_top))
    return np.asarray(pts)


def _cube_points(n, side=1.15, z_center=1.3):
    corners = []
    for ix in (-1, 1):
        for iy in (-1, 1):
            for iz in (-1, 1):
                corners.append([ix * side / 2, iy * side / 2, z_center + iz * side / 2])
    corners = np.asarray(corners)
    if n <= 8:
        return corners[:n]
    extra = _circle_points(n - 8, side * 0.9, z_center)
    return np.vstack([corners, extra])


def _sphere_points(n, radius=0.95, z_center=1.3):
    # Fibonacci lattice
    idx = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * idx / n)
    golden = np.pi * (1 + np.sqrt(5.0))
    ang = golden * idx
    pts = np.stack([radius * np.cos(ang) * np.sin(phi),
                    radius * np.sin(ang) * np.sin(phi),
                    z_center + radius * np.cos(phi)], axis=1)
    return pts


FORMATION_BUILDERS = {
    "plane": _plane_points,
    "pyramid": _pyramid_points,
    "cube": _cube_points,
    "sphere": _sphere_points,
}


# -- builders --------------------------------------------------------------------


def circle_exchange(n_uavs=8, n_cus=2, rounds=150, seed=0, radius=1.3, z=1.3, **kw):
    """Everyone swaps to the antipodal point of a circle; all paths cross the
    center, the stress case for the anti-collision constraints."""
    pts = _circle_points(n_uavs, radius, z)
    targets = pts.copy()
    targets[:, 0] = -pts[:, 0]
    targets[:, 1] = -pts[:, 1]
    return Scenario("circle-exchange", n_uavs, n_cus, rounds, pts,
                    [(0, targets)], seed=seed, **kw)


def random_targets(n_uavs=8, n_cus=2, rounds=150, seed=0, min_sep_factor=1.8, **kw):
    cfg = kw.get("config") or default_config()
    rng = np.random.default_rng([seed, 5])
    lo = cfg.pos_min + 0.25
    hi = cfg.pos_max - 0.25
    hi = np.maximum(hi, lo + 0.1)

    def sample_set():
        for _ in range(4000):
            pts = rng.uniform(lo, hi, size=(n_uavs, 3))
            try:
                validate_separation(pts, cfg.theta, cfg.d_hat_min, factor=min_sep_factor)
                return pts
            except ValueError:
                continue
        raise ValueError("could not sample a separated point set; box too small")

    start = sample_set()
    goals = sample_set()
    return Scenario("random-targets", n_uavs, n_cus, rounds, start,
                    [(0, goals)], seed=seed, **kw)


def formations(n_uavs=8, n_cus=2, phase_rounds=100, seed=0, **kw):
    """Plane, pyramid, cube, sphere, back to plane. The assignment of
    vehicles to formation slots is shuffled per phase by the seed."""
    rng = np.random.default_rng([seed, 11])
    sequence = ["pyramid", "cube", "sphere", "plane"]
    start = _plane_points(n_uavs)
    script = []
    for p, name in enumerate(sequence):
        pts = FORMATION_BUILDERS[name](n_uavs)
        perm = rng.permutation(n_uavs)
        script.append((p * phase_rounds, pts[perm]))
    rounds = kw.pop("rounds", len(sequence) * phase_rounds)
    return Scenario("formations", n_uavs, n_cus, rounds, start, script, seed=seed, **kw)


def cross_exchange(n_uavs=4, n_cus=2, rounds=300, seed=0, radius=1.0, z=1.2, **kw):
    """Symmetric head-on exchange through the center; stalls without the
    deadlock machinery.

    Ids are ordered so facing vehicles form consecutive pairs and therefore
    replan in the same round: their optimization problems are exact mirror
    images and the plans cancel at the midplane. Coordinates are exact so the
    mirror symmetry survives floating point.
    """
    if n_uavs % 2:
        raise ValueError("cross-exchange needs an even vehicle count")
    pts = []
    pairs = n_uavs // 2
    for p in range(pairs):
        ang = np.pi * p / pairs
        x, y = radius * np.cos(ang), radius * np.sin(ang)
        pts.append([x, y, z])
        pts.append([-x, -y, z])
    pts = np.asarray(pts)
    targets = pts.copy()
    targets[:, 0] = -pts[:, 0]
    targets[:, 1] = -pts[:, 1]
    return Scenario("cross-exchange", n_uavs, n_cus, rounds, pts,
                    [(0, targets)], seed=seed, **kw)


BUILDERS = {
    "circle-exchange": circle_exchange,
    "random-targets": random_targets,
    "formations": formations,
    "cross-exchange": cross_exchange,
}


def make_scenario(name, **params):
    if name not in BUILDERS:
        raise ValueError(f"unknown scenario {name!r}; know {sorted(BUILDERS)}")
    return BUILDERS[name](**params)


# -- jam syntax and scenario files ------------------------------------------------


def parse_jam(text, n_uavs, n_cus):
    """start:end:nodes with end an int or 'inf', nodes a comma list of
    uavK / cuK tokens or the groups 'uavs', 'cus', 'all'."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"jam spec {text!r} is not start:end:nodes")
    start = int(parts[0])
    end = None if parts[1] in ("inf", "-1") else int(parts[1])
    nodes = []
    for tok in parts[2].split(","):
        tok = tok.strip().lower()
        if tok == "all":
            nodes += [("uav", i) for i in range(n_uavs)] + [("cu", w) for w in range(n_cus)]
        elif tok == "uavs":
            nodes += [("uav", i) for i in range(n_uavs)]
        elif tok == "cus":
            nodes += [("cu", w) for w in range(n_cus)]
        elif tok.startswith("uav"):
            nodes.append(("uav", int(tok[3:])))
        elif tok.startswith("cu"):
            nodes.append(("cu", int(tok[2:])))
        else:
            raise ValueError(f"unknown jam node {tok!r}")
    return JamWindow(start, end, tuple(nodes))


_BOOL_KEYS = ("soft_constraints", "planner", "disable_mlr")
_INT_KEYS = ("n_uavs", "n_cus", "rounds", "seed", "phase_rounds")
_FLOAT_KEYS = ("loss_prob", "d_hat_min", "delta_d_min", "radius", "z", "min_sep_factor")


def load_scenario_file(path):
    """Scenario from a key = value text file; '#' starts a comment.

    Recognized keys: scenario (geometry name), the int/float/bool knobs above,
    trigger, and jam (repeatable). d_hat_min and delta_d_min override the
    defaults of the optimization config and tracking model.
    """
    raw = {}
    jams = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad scenario line {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "jam":
                jams.append(value)
            else:
                raw[key] = value
    name = raw.pop("scenario", "circle-exchange")
    params = {}
    for key, value in raw.items():
        if key in _BOOL_KEYS:
            params[key] = value.lower() in ("1", "true", "yes", "on")
        elif key in _INT_KEYS:
            params[key] = int(value)
        elif key in _FLOAT_KEYS:
            params[key] = float(value)
        elif key == "trigger":
            params[key] = value.lower()
        else:
            raise ValueError(f"unknown scenario key {key!r}")
    d_hat = params.pop("d_hat_min", None)
    if d_hat is not None:
        params["config"] = default_config(d_hat_min=d_hat)
    n_uavs = params.get("n_uavs", 8)
    n_cus = params.get("n_cus", 2)
    if jams:
        params["jams"] = tuple(parse_jam(j, n_uavs, n_cus) for j in jams)
    return make_scenario(name, **params)
