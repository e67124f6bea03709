"""Adaptive-vs-baseline comparison runs and plot-ready CSV export.

The baseline is an ablation of the planner (bounds frozen at their
zero-disturbance values, energy and directional penalties off, no mode
switching). It is labelled as such in every report.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, load_config
from .simulator import Metrics, SimLog, timed_run

log = logging.getLogger(__name__)

VARIANTS = ("adaptive", "fixed_bounds")
BASELINE_LABEL = "fixed_bounds (ablation: zero-disturbance bounds, no F_e/F_d, no mode switching)"
METRIC_KEYS = {"time": "time_s", "energy": "energy_wh", "rmse": "rmse_m"}


@dataclass
class Cell:
    scenario: str
    variant: str
    metrics: Metrics | None = None
    wall_s: float = 0.0
    error: str | None = None
    failure: str | None = None
    events: list = field(default_factory=list)
    latency_median_s: float | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.metrics is not None and self.metrics.success

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario, "variant": self.variant,
            "metrics": None if self.metrics is None else self.metrics.as_dict(),
            "wall_s": self.wall_s, "error": self.error, "failure": self.failure,
            "switch_events": [e for e in self.events if e["kind"] == "switch"],
            "plan_latency_median_s": self.latency_median_s,
        }


@dataclass
class BenchmarkReport:
    cells: list = field(default_factory=list)
    expectations: dict = field(default_factory=dict)  # scenario -> {metric: "less"|"any"}

    def cell(self, scenario: str, variant: str) -> Cell | None:
        for c in self.cells:
            if c.scenario == scenario and c.variant == variant:
                return c
        return None

    @property
    def scenarios(self) -> list:
        seen = []
        for c in self.cells:
            if c.scenario not in seen:
                seen.append(c.scenario)
        return seen

    def deltas(self, scenario: str) -> dict:
        """``adaptive - baseline`` per metric, when both runs produced metrics."""
        a, b = self.cell(scenario, "adaptive"), self.cell(scenario, "fixed_bounds")
        if a is None or b is None or a.metrics is None or b.metrics is None:
            return {}
        return {k: getattr(a.metrics, attr) - getattr(b.metrics, attr) for k, attr in METRIC_KEYS.items()}

    def checks(self, scenario: str) -> dict:
        """Pass/fail of each ``"less"`` expectation for one scenario."""
        out = {}
        expect = self.expectations.get(scenario, {})
        a, b = self.cell(scenario, "adaptive"), self.cell(scenario, "fixed_bounds")
        for key, rule in expect.items():
            if rule != "less":
                continue
            if a is None or b is None or not a.ok or b.metrics is None:
                out[key] = False
                continue
            attr = METRIC_KEYS[key]
            out[key] = bool(getattr(a.metrics, attr) < getattr(b.metrics, attr))
        return out

    @property
    def all_succeeded(self) -> bool:
        return bool(self.cells) and all(c.ok for c in self.cells)

    @property
    def expectations_hold(self) -> bool:
        return all(all(self.checks(s).values()) for s in self.scenarios)

    @property
    def passed(self) -> bool:
        return self.all_succeeded and self.expectations_hold

    def as_dict(self) -> dict:
        return {
            "baseline": BASELINE_LABEL,
            "cells": [c.as_dict() for c in self.cells],
            "scenarios": {s: {"deltas": self.deltas(s), "expect": self.expectations.get(s, {}),
                              "checks": self.checks(s)} for s in self.scenarios},
            "all_succeeded": self.all_succeeded,
            "expectations_hold": self.expectations_hold,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def table(self) -> str:
        head = f"{'scenario':<12} {'variant':<13} {'time_s':>8} {'energy_wh':>10} {'rmse_m':>8} {'ok':>4}"
        lines = [head, "-" * len(head)]
        for s in self.scenarios:
            for v in VARIANTS:
                c = self.cell(s, v)
                if c is None:
                    continue
                if c.metrics is None:
                    lines.append(f"{s:<12} {v:<13} {'error: ' + str(c.error):>34}")
                    continue
                m = c.metrics
                lines.append(f"{s:<12} {v:<13} {m.time_s:8.3f} {m.energy_wh:10.4f} {m.rmse_m:8.4f} "
                             f"{'yes' if c.ok else 'no':>4}")
            d = self.deltas(s)
            if d:
                lines.append(f"{'':<12} {'delta':<13} {d['time']:+8.3f} {d['energy']:+10.4f} {d['rmse']:+8.4f}")
            for key, ok in self.checks(s).items():
                lines.append(f"{'':<12} expect adaptive {key} < baseline: {'PASS' if ok else 'FAIL'}")
        lines.append(f"baseline = {BASELINE_LABEL}")
        return "\n".join(lines)


def _run_cell(args) -> Cell:
    cfg, variant = args
    cell = Cell(cfg.name, variant)
    try:
        sim_log, metrics, wall = timed_run(cfg.with_variant(variant))
    except Exception as exc:  # recorded per cell; the benchmark carries on
        log.exception("scenario %s/%s failed", cfg.name, variant)
        cell.error = f"{type(exc).__name__}: {exc}"
        return cell
    cell.metrics = metrics
    cell.wall_s = wall
    cell.failure = sim_log.failure
    cell.events = sim_log.events
    if sim_log.plan_latencies:
        cell.latency_median_s = float(np.median(sim_log.plan_latencies))
    return cell


def run_benchmark(scenarios, variants=VARIANTS, workers: int = 1) -> BenchmarkReport:
    """Run every scenario under every variant.

    ``scenarios`` holds ScenarioConfig objects or config paths. With
    ``workers > 1`` cells run in separate processes; the report is assembled
    in submission order either way.
    """
    cfgs = [s if isinstance(s, ScenarioConfig) else load_config(s) for s in scenarios]
    if not cfgs:
        raise ValueError("at least one scenario is required")
    variants = tuple(variants)
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    jobs = [(c, v) for c in cfgs for v in variants]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]
    expectations = {c.name: {"time": c.expect.time, "energy": c.expect.energy, "rmse": c.expect.rmse}
                    for c in cfgs}
    if set(variants) != set(VARIANTS):
        expectations = {}  # orderings need both variants
    return BenchmarkReport(cells, expectations)


# ---------------------------------------------------------------- plot export

def _write(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def emit_plots(sim_log: SimLog, out_dir) -> dict:
    """Write plot-ready CSV series; nothing is rendered.

    * ``disturbance.csv``: estimated and true lumped disturbance per axis
    * ``tracking_{x,y,z}.csv``: reference vs actual position, velocity and
      acceleration for one axis
    * ``mode_timeline.csv``: mode per sample plus the switch events
    """
    if len(sim_log) == 0:
        raise ValueError("log is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = sim_log.time
    paths = {}
    dh = sim_log.columns("dhat_x", "dhat_y", "dhat_z")
    dt = sim_log.columns("dtrue_x", "dtrue_y", "dtrue_z")
    paths["disturbance"] = _write(
        out / "disturbance.csv",
        ["t", "dhat_x", "dhat_y", "dhat_z", "dtrue_x", "dtrue_y", "dtrue_z"],
        ([repr(float(t[i])), *map(repr, dh[i].tolist()), *map(repr, dt[i].tolist())] for i in range(len(t))))
    for axis in "xyz":
        cols = [f"ref_{axis}", axis, f"ref_v{axis}", f"v{axis}", f"ref_a{axis}", f"aact_{axis}"]
        data = sim_log.columns(*cols)
        paths[f"tracking_{axis}"] = _write(
            out / f"tracking_{axis}.csv",
            ["t", "ref_pos", "pos", "ref_vel", "vel", "ref_acc", "acc"],
            ([repr(float(t[i])), *map(repr, data[i].tolist())] for i in range(len(t))))
    modes = sim_log.modes
    switches = {round(e["t"], 9): e["action"] for e in sim_log.switch_events()}
    rows = []
    for i in range(len(t)):
        # a switch logged at tick start shows up on the row that tick produced
        t_tick = round(float(t[i]) - sim_log.dt, 9)
        rows.append([repr(float(t[i])), modes[i], switches.get(t_tick, "")])
    paths["mode_timeline"] = _write(out / "mode_timeline.csv", ["t", "mode", "switch"], rows)
    return paths

