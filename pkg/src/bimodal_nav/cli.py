"""Command line entry point: ``plan``, ``simulate``, ``benchmark``, ``observe``.

Exit status is 0 only when every requested run succeeds (and, for
``benchmark``, every expected ordering holds); 1 for a failed run or
ordering; 2 for unusable input.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .benchmark import VARIANTS, emit_plots, run_benchmark
from .config import ConfigError, ScenarioConfig, load_config
from .core import build_esdf
from .observer import nominal_disturbance
from .search import SearchError
from .simulator import (DisturbanceField, SimLog, ScenarioPlanner, replay_observer, run_scenario,
                        sample_disturbance, true_disturbance_accel, write_outputs)

log = logging.getLogger("bimodal_nav")

VARIANT_ALIASES = {"adaptive": "adaptive", "fixed": "fixed_bounds", "fixed_bounds": "fixed_bounds",
                   "baseline": "fixed_bounds"}


def _variants(text: str) -> list:
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if part not in VARIANT_ALIASES:
            raise argparse.ArgumentTypeError(f"unknown variant {part!r}")
        out.append(VARIANT_ALIASES[part])
    if not out:
        raise argparse.ArgumentTypeError("no variants given")
    return out


def _positive(text: str) -> float:
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return x


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    sim = cfg.sim
    if args.seed is not None:
        sim = replace(sim, seed=args.seed)
    if args.dt_control is not None:
        sim = replace(sim, dt_control=args.dt_control)
    if args.replan_hz is not None:
        sim = replace(sim, replan_hz=args.replan_hz)
    cfg = replace(cfg, sim=sim)
    if getattr(args, "variant", None):
        cfg = cfg.with_variant(VARIANT_ALIASES[args.variant])
    return cfg


def _out_dir(args, name: str) -> Path:
    out = Path(args.out) if args.out else Path("out") / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_plan(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    p = cfg.params
    state = cfg.start.to_state()
    esdf = build_esdf(cfg.build_grid(), cfg.map.truncation)
    fields = DisturbanceField.from_config(cfg)
    planner = ScenarioPlanner(cfg, esdf, fields, p)
    # a one-shot plan assumes the estimator has converged at the start state
    d_air, res = sample_disturbance(fields, state, p, 0.0)
    d_hat = (true_disturbance_accel(state, d_air, res, p) if planner.adaptive
             else nominal_disturbance(state.mode, p))
    start = (state.position, state.velocity, np.zeros(3))
    try:
        plan = planner.plan(start, state.mode, d_hat, 0.0)
    except SearchError as exc:
        print(f"plan failed: {exc}", file=sys.stderr)
        return 1
    out = _out_dir(args, cfg.name)
    doc = {
        "scenario": cfg.name,
        "variant": cfg.planner_variant,
        "mode": state.mode.value,
        "d_hat": d_hat.tolist(),
        "path": [n.position.tolist() for n in plan.search.nodes],
        "dt": plan.spline.dt,
        "control_points": plan.spline.control_points.tolist(),
        "detail": plan.as_dict(),
    }
    (out / "plan.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"{cfg.name}: {len(doc['path'])} path nodes, {len(doc['control_points'])} control points, "
          f"duration {plan.spline.duration:.2f} s, search {plan.latency['search'] * 1e3:.1f} ms, "
          f"total {plan.latency['total'] * 1e3:.1f} ms -> {out / 'plan.json'}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    sim_log, metrics = run_scenario(cfg)
    out = _out_dir(args, cfg.name)
    write_outputs(sim_log, metrics, out)
    if len(sim_log):
        emit_plots(sim_log, out / "plots")
    print(json.dumps(metrics.as_dict()))
    if sim_log.failure:
        print(f"failure: {sim_log.failure}", file=sys.stderr)
    return 0 if metrics.success else 1


def cmd_benchmark(args) -> int:
    cfgs = [_apply_overrides(load_config(path), args) for path in args.configs]
    report = run_benchmark(cfgs, args.variants, workers=args.workers)
    out = _out_dir(args, "benchmark")
    (out / "report.json").write_text(report.to_json() + "\n")
    print(report.table())
    return 0 if report.passed else 1


def cmd_observe(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args, cfg.name)
    if args.log:
        sim_log = SimLog.from_csv(args.log)
    else:
        sim_log, _ = run_scenario(cfg)
    if len(sim_log) == 0:
        print("observe: the log is empty", file=sys.stderr)
        return 1
    est = replay_observer(sim_log, cfg, args.T)
    logged = sim_log.columns("dhat_x", "dhat_y", "dhat_z")
    truth = sim_log.columns("dtrue_x", "dtrue_y", "dtrue_z")
    path = out / "observe.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mode", "replay_x", "replay_y", "replay_z", "logged_x", "logged_y", "logged_z",
                    "true_x", "true_y", "true_z"])
        for i, t in enumerate(sim_log.time):
            w.writerow([repr(float(t)), sim_log.modes[i], *map(repr, est[i].tolist()),
                        *map(repr, logged[i].tolist()), *map(repr, truth[i].tolist())])
    err = np.linalg.norm(est - truth, axis=1)
    print(f"{cfg.name}: {len(sim_log)} samples, replay-vs-truth error mean {err.mean():.4f} "
          f"max {err.max():.4f} m/s^2 -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", help="output directory (default out/<scenario>)")
    common.add_argument("--seed", type=int, help="override the scenario's noise seed")
    common.add_argument("--dt-control", type=_positive, help="control period in seconds")
    common.add_argument("--replan-hz", type=_positive, help="replanning rate")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bimodal-nav", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common], help="one search + optimize cycle from the start state")
    p.add_argument("config")
    p.add_argument("--variant", choices=sorted(VARIANT_ALIASES))
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", parents=[common], help="closed-loop run; writes log, metrics, plot CSVs")
    p.add_argument("config")
    p.add_argument("--variant", choices=sorted(VARIANT_ALIASES))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", parents=[common], help="adaptive vs fixed-bounds comparison")
    p.add_argument("configs", nargs="+")
    p.add_argument("--variants", type=_variants, default=list(VARIANTS),
                   help="comma list out of adaptive,fixed (default both)")
    p.add_argument("--workers", type=int, default=1, help="parallel processes")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("observe", parents=[common], help="replay the estimator over a logged run")
    p.add_argument("config")
    p.add_argument("--log", help="simlog.csv from an earlier simulate (default: run one now)")
    p.add_argument("--T", type=_positive, help="filter time constant for the replay")
    p.add_argument("--variant", choices=sorted(VARIANT_ALIASES))
    p.set_defaults(func=cmd_observe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
