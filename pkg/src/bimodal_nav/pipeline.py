"""Front-end search plus back-end refinement, producing a timed trajectory."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bounds import AccelBounds
from .core import Esdf, Mode, as_vec3
from .optimize import OptimizationResult, OptimizeConfig, UniformBSpline, fit_from_nodes, optimize_detailed
from .search import PathNode, SearchConfig, SearchResult, search


@dataclass
class Plan:
    """An optimized spline anchored at absolute time ``t0``."""

    spline: UniformBSpline
    t0: float = 0.0
    cost: float = 0.0
    search: SearchResult | None = None
    optimization: OptimizationResult | None = None
    mode: Mode = Mode.LAND
    latency: dict = field(default_factory=dict)

    @property
    def t_end(self) -> float:
        return self.t0 + self.spline.duration

    def reference(self, t: float):
        """Position, velocity, acceleration at absolute time ``t``.

        Past the end the final position is held at rest.
        """
        p, v, a, clamped = self.spline.evaluate(t - self.t0)
        if t - self.t0 > self.spline.duration:
            return p, np.zeros(3), np.zeros(3)
        return p, v, a

    def horizon(self, t: float, count: int, spacing: float, offset: float = 0.0) -> np.ndarray:
        ts = (t - self.t0) + offset + spacing * np.arange(count)
        p, _, _, _ = self.spline.evaluate(ts)
        return np.atleast_2d(p)

    def positions(self, dt: float = 0.05) -> np.ndarray:
        return self.spline.sample(dt)[1]

    def as_dict(self) -> dict:
        out = {"t0": self.t0, "mode": self.mode.value, "cost": self.cost, "spline": self.spline.as_dict(),
               "latency_s": self.latency}
        if self.search is not None:
            out["path"] = self.search.as_dict()
        if self.optimization is not None:
            out["optimization"] = {"initial_cost": self.optimization.initial_cost,
                                   "final_cost": self.optimization.final_cost,
                                   "iterations": self.optimization.iterations,
                                   "degraded": self.optimization.degraded}
        return out


def _chain(first: SearchResult, second: SearchResult) -> SearchResult:
    """Concatenate two legs; the second must start at the first's end state."""
    nodes = list(first.nodes)
    parent = nodes[-1]
    for n in second.nodes[1:]:
        parent = PathNode(n.position, n.velocity, first.cost + n.g_cost, n.h_cost, parent,
                          n.primitive, n.mode_tag, parent.depth + 1)
        nodes.append(parent)
    return SearchResult(nodes, first.cost + second.cost, first.expansions + second.expansions,
                        first.air_branch, first.land_branch, first.primitives_seen + second.primitives_seen)


def plan_path(start_pos, start_vel, goal, esdf: Esdf, bounds_air: AccelBounds, bounds_land: AccelBounds,
              search_cfg: SearchConfig, opt_cfg: OptimizeConfig, mode: Mode = Mode.LAND,
              vertical: str | None = None, t0: float = 0.0, start_acc=None, waypoints=(),
              refine: bool = True) -> Plan:
    """Search (optionally through intermediate waypoints), fit and optimize.

    Raises the search module's errors when no path exists.
    """
    mode = Mode(mode)
    p0 = as_vec3(start_pos, "start position")
    v0 = as_vec3(start_vel, "start velocity")
    tic = time.perf_counter()
    result = None
    cur_p, cur_v = p0, v0
    for target in list(waypoints) + [goal]:
        leg = search((cur_p, cur_v), target, esdf, bounds_air, bounds_land, search_cfg, mode=mode,
                     vertical=vertical)
        result = leg if result is None else _chain(result, leg)
        cur_p, cur_v = leg.nodes[-1].position, leg.nodes[-1].velocity
    t_search = time.perf_counter() - tic

    dt = search_cfg.tau / 2.0
    spline = fit_from_nodes(result.nodes, dt, start_acc=start_acc)
    opt = None
    if refine:
        opt = optimize_detailed(spline, opt_cfg, esdf, result.air_branch, result.land_branch,
                                search_cfg.r_thr)
        spline = opt.spline
    if mode is Mode.LAND and vertical is None:
        Q = np.array(spline.control_points)
        Q[:, 2] = 0.0
        spline = spline.with_points(Q)
    latency = {"search": t_search, "total": time.perf_counter() - tic}
    return Plan(spline, t0, result.cost, result, opt, mode, latency)


def hold_plan(position, t0: float = 0.0, mode: Mode = Mode.LAND, dt: float = 0.2) -> Plan:
    """A trajectory that stays at ``position``."""
    Q = np.repeat(as_vec3(position, "position")[None, :], 4, axis=0)
    return Plan(UniformBSpline(Q, dt), t0, 0.0, None, None, Mode(mode))


def transfer_plan(start, end, t0: float = 0.0, mode: Mode = Mode.AIR, speed: float = 0.3,
                  dt: float = 0.1) -> Plan:
    """Straight rest-to-rest move at roughly ``speed``, used to finish a landing."""
    a = as_vec3(start, "start")
    b = as_vec3(end, "end")
    if not speed > 0:
        raise ValueError("speed must be positive")
    n = max(1, int(np.ceil(np.linalg.norm(b - a) / (speed * dt))))
    inner = a + (b - a) * (np.arange(1, n) / n)[:, None]
    Q = np.vstack([a, a, a, inner, b, b, b])
    return Plan(UniformBSpline(Q, dt), t0, 0.0, None, None, Mode(mode))

