"""Command line entry point.

Runs one scenario, optionally writes the trace, and with --check evaluates
the safety and consistency oracles (nonzero exit on any failure).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import harness, scenarios
from .trigger import TRIGGER_KINDS


def build_parser():
    p = argparse.ArgumentParser(
        prog="swarmmpc",
        description="Deterministic multi-vehicle swarm simulation with distributed "
                    "MPC planning over a lossy round-based broadcast.",
    )
    p.add_argument("--scenario", default="circle-exchange",
                   help="built-in name (%s) or a key=value scenario file"
                        % ", ".join(scenarios.SCENARIO_NAMES))
    p.add_argument("--n-uavs", type=int, default=None)
    p.add_argument("--n-cus", type=int, default=None)
    p.add_argument("--trigger", choices=TRIGGER_KINDS, default=None)
    p.add_argument("--loss-prob", type=float, default=None,
                   help="per (message, receiver) loss probability")
    p.add_argument("--jam", action="append", default=[],
                   help="start:end:nodes, e.g. 5:15:cus or 10:inf:all (repeatable)")
    p.add_argument("--disable-mlr", action="store_true",
                   help="ablation: keep planning as if no message were ever lost")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--phase-rounds", type=int, default=None,
                   help="rounds per formation phase (formations scenario)")
    p.add_argument("--no-soft-constraints", action="store_true")
    p.add_argument("--no-planner", action="store_true",
                   help="disable the deadlock make-room planner")
    p.add_argument("--parallel-cus", action="store_true",
                   help="run compute-unit steps in worker threads")
    p.add_argument("--out", default=None, help="directory for trace.csv / events.jsonl")
    p.add_argument("--check", action="store_true",
                   help="run all oracles; exit nonzero on any failure")
    return p


def _build_scenario(args):
    overrides = {}
    if args.n_uavs is not None:
        overrides["n_uavs"] = args.n_uavs
    if args.n_cus is not None:
        overrides["n_cus"] = args.n_cus
    if args.trigger is not None:
        overrides["trigger"] = args.trigger
    if args.loss_prob is not None:
        overrides["loss_prob"] = args.loss_prob
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.rounds is not None:
        overrides["rounds"] = args.rounds
    if args.phase_rounds is not None:
        overrides["phase_rounds"] = args.phase_rounds
    if args.no_soft_constraints:
        overrides["soft_constraints"] = False
    if args.no_planner:
        overrides["planner"] = False
    if args.disable_mlr:
        overrides["disable_mlr"] = True

    if os.path.exists(args.scenario):
        if overrides or args.jam:
            raise SystemExit("scenario files cannot be combined with override flags")
        return scenarios.load_scenario_file(args.scenario)

    name = args.scenario
    if name == "formations" and "rounds" in overrides and "phase_rounds" not in overrides:
        overrides["phase_rounds"] = max(1, overrides.pop("rounds") // 4)
    sc = scenarios.make_scenario(name, **{k: v for k, v in overrides.items() if k != "jams"})
    if args.jam:
        jams = tuple(scenarios.parse_jam(j, sc.n_uavs, sc.n_cus) for j in args.jam)
        sc.jams = jams
    return sc


def main(argv=None):
    args = build_parser().parse_args(argv)
    sc = _build_scenario(args)
    trace = harness.run(sc, parallel_cus=args.parallel_cus)
    mets = harness.metrics(trace)

    summary = {
        "scenario": sc.name,
        "n_uavs": sc.n_uavs,
        "n_cus": sc.n_cus,
        "rounds": trace.n_rounds,
        "seed": sc.seed,
        "settle_round": mets.settle_round,
        "min_scaled_pairwise": float(np.min(mets.min_scaled_pairwise)),
        "final_max_target_dist": float(mets.dmax[-1]),
        "events": len(trace.events),
    }

    failures = 0
    if args.check:
        violations = harness.check_discrete_collisions(trace)
        report = harness.check_theorem_oracles(trace)
        margin, _ = harness.estimate_continuous_margin(sc.config, samples=500, seed=sc.seed)
        actual = harness.check_actual_collisions(trace, margin)
        checks = {
            "discrete_collisions": len(violations),
            "tracker_truth_failures": len(report.tracker_truth_failures),
            "tracker_agreement_failures": len(report.tracker_agreement_failures),
            "actual_distance_breaches": len(actual),
        }
        summary["checks"] = checks
        failures = sum(checks.values())
        for name, count in checks.items():
            print(f"[{'PASS' if count == 0 else 'FAIL'}] {name}: {count}")

    if args.out:
        csv_path, ev_path = harness.write_trace(trace, args.out)
        with open(os.path.join(args.out, "metrics.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        summary["trace"] = csv_path
        summary["events_file"] = ev_path

    print(json.dumps(summary, indent=2, sort_keys=True))
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
