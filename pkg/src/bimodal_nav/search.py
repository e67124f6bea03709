"""Kinodynamic A* over constant-acceleration motion primitives.

Nodes carry position and velocity. Each expansion applies every primitive of
the acceleration lattice built from the bounds of the node's altitude branch
(air bounds above ``r_thr``, land bounds at or below it) for ``tau`` seconds.
The heuristic adds an altitude penalty and a directional penalty to a
time-optimal lower bound, so the search is weighted-A*-like rather than
strictly optimal when those penalties are switched on.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from .bounds import AccelBounds
from .core import Esdf, Mode, VehicleState, as_vec3, query_distance


class SearchError(RuntimeError):
    pass


class NoPathFound(SearchError):
    pass


class StartInCollision(SearchError):
    pass


class GoalInCollision(SearchError):
    pass


@dataclass
class SearchConfig:
    r_thr: float = 0.3
    eps: float = 1e-3
    samples_per_axis: int = 3
    include_zero: bool = True
    tau: float = 0.4
    pos_resolution: float | None = None  # None: map resolution
    vel_resolution: float = 0.5
    v_max: float = 2.0
    w_e: float = 1.0
    w_d: float = 1.0
    rho: float = 1.0
    heuristic_weight: float = 1.0
    goal_tolerance: float = 0.3
    clearance: float = 0.2
    check_steps: int = 4
    max_expansions: int = 20000
    descent_boost: float = 3.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.r_thr <= 0:
            raise ValueError("r_thr must be positive")
        if self.samples_per_axis < 3 or self.samples_per_axis % 2 == 0:
            raise ValueError("samples_per_axis must be odd and >= 3")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class MotionPrimitive:
    accel: np.ndarray
    duration: float


@dataclass(eq=False)
class PathNode:
    position: np.ndarray
    velocity: np.ndarray
    g_cost: float
    h_cost: float
    parent: "PathNode | None" = None
    primitive: MotionPrimitive | None = None
    mode_tag: Mode = Mode.LAND
    depth: int = 0

    @property
    def f_cost(self) -> float:
        return self.g_cost + self.h_cost


@dataclass
class SearchResult:
    nodes: list
    cost: float
    expansions: int
    air_branch: AccelBounds
    land_branch: AccelBounds
    primitives_seen: list = field(default_factory=list)

    @property
    def primitives(self) -> list:
        return [n.primitive for n in self.nodes[1:]]

    def as_dict(self) -> dict:
        return {
            "cost": self.cost,
            "expansions": self.expansions,
            "nodes": [
                {
                    "position": n.position.tolist(),
                    "velocity": n.velocity.tolist(),
                    "g": n.g_cost,
                    "h": n.h_cost,
                    "mode": n.mode_tag.value,
                    "accel": None if n.primitive is None else n.primitive.accel.tolist(),
                    "duration": None if n.primitive is None else n.primitive.duration,
                }
                for n in self.nodes
            ],
        }


def altitude_penalty(r3: float, r_thr: float) -> float:
    return (r3 - r_thr) ** 2 if r3 > r_thr else 0.0


def feasibility_margin(a, bounds: AccelBounds) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.sum(np.minimum(a - bounds.lower, bounds.upper - a)))


def directional_penalty(a, bounds_air: AccelBounds, bounds_land: AccelBounds, r3: float,
                        cfg: SearchConfig) -> float:
    bounds = bounds_air if r3 > cfg.r_thr else bounds_land
    return 1.0 / (cfg.eps + feasibility_margin(a, bounds))


def min_time_lower_bound(delta, v0, amin, amax, tol):
    """Lower bound on the time for a double integrator with per-axis
    acceleration in ``[amin, amax]`` to bring every axis within ``tol`` of
    ``delta``, velocity free. Arrays broadcast over leading dims, last dim is axis.
    Returns the max over axes (inf if some axis cannot get there).

    Candidates per axis are ``t = 0`` and the roots of reaching the far edge
    of the window at full deceleration or the near edge at full acceleration.
    """
    delta = np.asarray(delta, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    amin = np.asarray(amin, dtype=float)
    amax = np.asarray(amax, dtype=float)
    lo_t, hi_t = delta - tol, delta + tol
    slack = 1e-9 * (1.0 + np.abs(delta))
    best = np.where((hi_t + slack >= 0.0) & (lo_t - slack <= 0.0), 0.0, np.inf)
    with np.errstate(all="ignore"):
        for half_a, c in ((0.5 * amin, hi_t), (0.5 * amax, lo_t)):
            small = np.abs(half_a) < 1e-12
            sq = np.sqrt(v0 * v0 + 4.0 * half_a * c)
            denom = np.where(small, 1.0, 2.0 * half_a)
            lin = np.where(v0 != 0.0, c / np.where(v0 == 0.0, 1.0, v0), np.nan)
            for t in (np.where(small, lin, (-v0 + sq) / denom), np.where(small, np.nan, (-v0 - sq) / denom)):
                tt = t * t
                ok = ((t >= 0.0) & (t < best) & np.isfinite(t)
                      & (v0 * t + 0.5 * amin * tt <= hi_t + slack)
                      & (v0 * t + 0.5 * amax * tt >= lo_t - slack))
                best = np.where(ok, t, best)
    return best.max(axis=-1)


def time_lower_bound(delta, v0, amin, amax, tol, v_max=None):
    """``min_time_lower_bound`` tightened by the speed limit: the remaining
    distance to the goal ball cannot be covered faster than at ``v_max``."""
    t = min_time_lower_bound(delta, v0, amin, amax, tol)
    if v_max is None or not v_max > 0:
        return t
    dist = np.linalg.norm(np.asarray(delta, dtype=float), axis=-1)
    return np.maximum(t, np.maximum(dist - tol, 0.0) / v_max)


def branch_bounds(mode: Mode, bounds_air: AccelBounds, bounds_land: AccelBounds,
                  vertical: str | None = None, descent_boost: float = 3.0):
    """Bounds governing nodes above (air branch) and at/below (land branch) ``r_thr``.

    ``vertical="up"`` raises the land z upper bound to the flight-mode z
    maximum so the search may lift off; ``vertical="down"`` lowers the flight
    z minimum by ``descent_boost``. A flying vehicle below the threshold keeps
    the land x/y intervals with the flight-mode z interval.
    """
    air, land = bounds_air, bounds_land
    if vertical == "down":
        air = air.with_z(air.lower[2] - descent_boost, air.upper[2])
    if Mode(mode) is Mode.AIR or vertical == "down":
        land = land.with_z(air.lower[2], air.upper[2])
    elif vertical == "up":
        land = land.with_z(0.0, bounds_air.upper[2])
    elif vertical is not None:
        raise ValueError(f"unknown vertical option {vertical!r}")
    return air, land


def primitive_lattice(bounds: AccelBounds, n: int, include_zero: bool = True) -> np.ndarray:
    axes = []
    for k in range(3):
        lo, hi = bounds.lower[k], bounds.upper[k]
        if hi - lo <= 1e-12:
            vals = [lo]
        else:
            vals = list(np.linspace(lo, hi, n))
            if include_zero and lo < 0.0 < hi and not any(abs(v) < 1e-12 for v in vals):
                vals.append(0.0)
                vals.sort()
        axes.append(vals)
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, 3)


def heuristic(position, velocity, goal, accel, bounds_air: AccelBounds, bounds_land: AccelBounds,
              cfg: SearchConfig, r3_branch: float | None = None) -> float:
    """``h_c + w_e F_e(r3) + w_d F_d(a)`` for one state.

    ``accel`` is the primitive that produced the state (``None`` for the root).
    ``r3_branch`` picks the bounds ``accel`` was generated under (defaults to
    the state's own altitude).
    """
    position = np.asarray(position, dtype=float)
    amin = np.minimum(bounds_air.lower, bounds_land.lower)
    amax = np.maximum(bounds_air.upper, bounds_land.upper)
    t = time_lower_bound(np.asarray(goal) - position, velocity, amin, amax, cfg.goal_tolerance, cfg.v_max)
    h = cfg.heuristic_weight * cfg.rho * float(t)
    h += cfg.w_e * altitude_penalty(position[2], cfg.r_thr)
    if accel is not None:
        r3 = position[2] if r3_branch is None else r3_branch
        h += cfg.w_d * directional_penalty(accel, bounds_air, bounds_land, r3, cfg)
    return h


def _state_of(start):
    if isinstance(start, VehicleState):
        return start.position.copy(), start.velocity.copy()
    p, v = start
    return as_vec3(p, "start position"), as_vec3(v, "start velocity")


def search(start, goal, esdf: Esdf, bounds_air: AccelBounds, bounds_land: AccelBounds,
           cfg: SearchConfig, mode: Mode = Mode.LAND, vertical: str | None = None,
           record_primitives: bool = False) -> SearchResult:
    """Search a primitive sequence from ``start`` to the goal ball.

    ``start`` is a VehicleState or a ``(position, velocity)`` pair. Costs
    accumulate ``(|a|^2 + rho) * tau`` per primitive.
    """
    p0, v0 = _state_of(start)
    goal = as_vec3(goal, "goal")
    grid = esdf.grid
    if not grid.in_bounds(goal):
        raise GoalInCollision(f"goal {goal} outside map")
    if grid.is_occupied(goal):
        raise GoalInCollision(f"goal {goal} is occupied")
    if grid.is_occupied(p0) or not grid.in_bounds(p0):
        raise StartInCollision(f"start {p0} is occupied or outside the map")

    air_b, land_b = branch_bounds(mode, bounds_air, bounds_land, vertical, cfg.descent_boost)
    lattices = {
        True: primitive_lattice(air_b, cfg.samples_per_axis, cfg.include_zero),
        False: primitive_lattice(land_b, cfg.samples_per_axis, cfg.include_zero),
    }
    sq_norm = {k: np.einsum("ij,ij->i", A, A) for k, A in lattices.items()}
    margins = {}
    for key, A in lattices.items():
        b = air_b if key else land_b
        margins[key] = np.sum(np.minimum(A - b.lower, b.upper - A), axis=1)
    amin = np.minimum(air_b.lower, land_b.lower)
    amax = np.maximum(air_b.upper, land_b.upper)

    tau = cfg.tau
    ts = np.linspace(0.0, tau, cfg.check_steps + 1)[1:]
    res_p = cfg.pos_resolution or esdf.resolution
    res_v = cfg.vel_resolution
    d_start, _ = query_distance(esdf, p0)
    clearance = min(cfg.clearance, max(0.0, d_start - 1e-6))
    tol = cfg.goal_tolerance

    def key_of(p, v):
        return (tuple(np.floor(p / res_p + 0.5).astype(int)), tuple(np.floor(v / res_v + 0.5).astype(int)))

    def mode_tag(z):
        return Mode.AIR if z > cfg.r_thr else Mode.LAND

    h0 = cfg.heuristic_weight * cfg.rho * float(
        time_lower_bound(goal - p0, v0, amin, amax, tol, cfg.v_max)) + cfg.w_e * altitude_penalty(p0[2], cfg.r_thr)
    root = PathNode(p0, v0, 0.0, h0, mode_tag=mode_tag(p0[2]))
    counter = itertools.count()
    open_heap = [(root.f_cost, root.h_cost, tuple(p0) + tuple(v0), next(counter), root)]
    closed = set()
    best_f = {}
    expansions = 0
    seen = []

    while open_heap:
        _, _, _, _, node = heapq.heappop(open_heap)
        p, v = node.position, node.velocity
        k = key_of(p, v)
        if k in closed:
            continue
        closed.add(k)
        if np.linalg.norm(p - goal) <= tol:
            path = []
            n = node
            while n is not None:
                path.append(n)
                n = n.parent
            path.reverse()
            return SearchResult(path, node.g_cost, expansions, air_b, land_b, seen)
        if expansions >= cfg.max_expansions:
            break
        expansions += 1

        branch = bool(p[2] > cfg.r_thr)
        A = lattices[branch]
        P = p + v * ts[None, :, None] + 0.5 * A[:, None, :] * (ts ** 2)[None, :, None]
        V_end = v + A * tau
        ok = np.einsum("ij,ij->i", V_end, V_end) <= cfg.v_max ** 2 + 1e-9
        ok &= np.all(P[:, :, 2] >= -1e-9, axis=1)
        if not ok.any():
            continue
        d, oob = query_distance(esdf, P[ok])
        good = np.all((d >= clearance) & ~oob, axis=1)
        idx = np.nonzero(ok)[0][good]
        if idx.size == 0:
            continue
        if record_primitives:
            seen.extend((node.mode_tag, A[i].copy()) for i in idx)
        P_end = P[idx, -1, :]
        Vn = V_end[idx]
        g_new = node.g_cost + (sq_norm[branch][idx] + cfg.rho) * tau
        t_lb = time_lower_bound(goal - P_end, Vn, amin, amax, tol, cfg.v_max)
        z = P_end[:, 2]
        f_e = np.where(z > cfg.r_thr, (z - cfg.r_thr) ** 2, 0.0)
        f_d = 1.0 / (cfg.eps + margins[branch][idx])
        h_new = cfg.heuristic_weight * cfg.rho * t_lb + cfg.w_e * f_e + cfg.w_d * f_d
        if not branch and land_b.upper[2] == 0.0 and land_b.lower[2] == 0.0:
            P_end = P_end.copy()
            P_end[:, 2] = p[2]
        f_new = g_new + h_new
        kp = np.floor(P_end / res_p + 0.5).astype(int).tolist()
        kv = np.floor(Vn / res_v + 0.5).astype(int).tolist()
        pl = P_end.tolist()
        vl = Vn.tolist()
        for j, i in enumerate(idx):
            if not np.isfinite(h_new[j]):
                continue
            ck = (tuple(kp[j]), tuple(kv[j]))
            if ck in closed:
                continue
            fj = float(f_new[j])
            if best_f.get(ck, np.inf) <= fj:
                continue
            best_f[ck] = fj
            child = PathNode(P_end[j], Vn[j], float(g_new[j]), float(h_new[j]), node,
                             MotionPrimitive(A[i], tau), mode_tag(pl[j][2]), node.depth + 1)
            heapq.heappush(open_heap, (fj, child.h_cost, tuple(pl[j]) + tuple(vl[j]), next(counter), child))
    raise NoPathFound(f"no path after {expansions} expansions")


def sample_path(nodes: list, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positions, velocities and accelerations along a node path every ``dt``."""
    if len(nodes) == 1:
        n = nodes[0]
        return n.position[None, :].copy(), n.velocity[None, :].copy(), np.zeros((1, 3))
    total = sum(n.primitive.duration for n in nodes[1:])
    times = np.arange(0.0, total + 1e-9, dt)
    if total - times[-1] > 1e-9:
        times = np.append(times, total)
    pos, vel, acc = [], [], []
    seg_start = 0.0
    seg = 1
    for t in times:
        while seg < len(nodes) - 1 and t > seg_start + nodes[seg].primitive.duration + 1e-12:
            seg_start += nodes[seg].primitive.duration
            seg += 1
        parent = nodes[seg - 1]
        a = nodes[seg].primitive.accel
        s = min(t - seg_start, nodes[seg].primitive.duration)
        pos.append(parent.position + parent.velocity * s + 0.5 * a * s * s)
        vel.append(parent.velocity + a * s)
        acc.append(a)
    return np.array(pos), np.array(vel), np.array(acc)
