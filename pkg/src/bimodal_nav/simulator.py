"""Deterministic closed-loop simulation of the bimodal vehicle.

One control tick (default 100 Hz) runs: observer update, periodic replanning
with the mode-switch decision, tracking, then several fixed RK4 dynamics
substeps with the disturbance field re-sampled at each substep.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import AccelBounds, air_bounds, land_bounds, nominal_bounds
from .config import GainSpec, ScenarioConfig
from .core import Esdf, Mode, VehicleParams, VehicleState, build_esdf, vec3
from .dynamics import (Disturbances, FlightInput, GroundResistance, IntegrationError, LandInput,
                       body_to_world, gyroscopic, motor_power, motor_rpms, step)
from .observer import UdeEstimator, nominal_disturbance, nominal_input_air, nominal_input_land
from .pipeline import Plan, plan_path, transfer_plan
from .search import SearchError
from .switch import Candidate, SwitchAction, decide

log = logging.getLogger(__name__)

SPEED_SCALE = 0.05  # m/s, tanh smoothing of Coulomb friction near zero speed

# body-frame wheel positions: front-left, front-right, rear-right, rear-left
def wheel_positions(p: VehicleParams) -> np.ndarray:
    h = p.w / 2.0
    return np.array([[p.b, h], [p.b, -h], [-p.a, -h], [-p.a, h]])


# ---------------------------------------------------------------- disturbances

def zone_weight(position, lo, hi, edge: float = 0.0) -> float:
    """Membership of ``position`` in the box ``[lo, hi]``.

    With ``edge == 0`` this is the indicator of the closed box. Otherwise
    each face contributes a linear ramp of width ``edge`` centred on it.
    """
    x = np.asarray(position, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if edge <= 0.0:
        return float(np.all(x >= lo) and np.all(x <= hi))
    ramp = np.clip((x - lo) / edge + 0.5, 0.0, 1.0) * np.clip((hi - x) / edge + 0.5, 0.0, 1.0)
    return float(np.prod(ramp))


@dataclass
class DisturbanceField:
    wind_zones: list = field(default_factory=list)
    resistance_zones: list = field(default_factory=list)
    mu: float = 0.02
    mu_lat: float = 0.1
    k_m: float = 0.0

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "DisturbanceField":
        for z in cfg.wind_zones:
            if np.any(np.asarray(z.max) <= np.asarray(z.min)):
                raise ValueError(f"degenerate wind zone {z.min}..{z.max}")
            if z.edge < 0:
                raise ValueError("wind zone edge must be non-negative")
        for z in cfg.resistance_zones:
            if z.mu < 0 or z.mu_lat < 0:
                raise ValueError("friction coefficients must be non-negative")
        return cls(list(cfg.wind_zones), list(cfg.resistance_zones), cfg.ground.mu, cfg.ground.mu_lat,
                   cfg.ground.k_m)

    def wind(self, position, t: float = 0.0) -> np.ndarray:
        total = vec3()
        for z in self.wind_zones:
            w = zone_weight(position, z.min, z.max, z.edge)
            if w <= 0.0:
                continue
            f = np.asarray(z.force, dtype=float)
            total += w * f
            if z.gust_amplitude:
                n = np.linalg.norm(f)
                direction = f / n if n > 0 else vec3(1.0)
                total += w * direction * z.gust_amplitude * math.sin(2 * math.pi * z.gust_frequency * t)
        return total

    def friction(self, xy) -> tuple[float, float, float]:
        """``(mu, mu_lat, k_m)`` of the last zone containing ``xy``, else the ground default."""
        out = (self.mu, self.mu_lat, self.k_m)
        for z in self.resistance_zones:
            if z.min[0] <= xy[0] <= z.max[0] and z.min[1] <= xy[1] <= z.max[1]:
                out = (z.mu, z.mu_lat, z.k_m)
        return out

    def exposure(self, points, g: float) -> float:
        """Largest nominal rolling-resistance deceleration along ``points``."""
        pts = np.atleast_2d(points)
        return max((self.friction(q)[0] * g for q in pts), default=0.0)


def sample_disturbance(fields: DisturbanceField, state: VehicleState, p: VehicleParams,
                       t: float = 0.0) -> tuple[np.ndarray, GroundResistance]:
    """Wind force and per-wheel resistance acting on ``state``.

    Resistances follow the dynamics' sign convention: positive values
    oppose forward/leftward wheel motion. Ground resistance only acts in
    Land mode.
    """
    d_air = fields.wind(state.position, t)
    if state.mode is not Mode.LAND:
        return d_air, GroundResistance()
    mu, mu_lat, k_m = fields.friction(state.position[:2])
    psi = state.attitude[2]
    c, s = math.cos(psi), math.sin(psi)
    vb = np.array([c * state.velocity[0] + s * state.velocity[1],
                   -s * state.velocity[0] + c * state.velocity[1]])
    wz = state.angular_velocity[2]
    r = wheel_positions(p)
    v_long = vb[0] - wz * r[:, 1]
    v_lat = vb[1] + wz * r[:, 0]
    load = p.m * p.g / 4.0
    rx = mu * load * np.tanh(v_long / SPEED_SCALE)
    ry = mu_lat * load * np.tanh(v_lat / SPEED_SCALE)
    extra = k_m * float(np.sum(rx))
    return d_air, GroundResistance(tuple(rx.tolist()), tuple(ry.tolist()), extra)


def true_disturbance_accel(state: VehicleState, d_air, res: GroundResistance, p: VehicleParams) -> np.ndarray:
    """Disturbance fields expressed as the observer's lumped acceleration."""
    if state.mode is Mode.AIR:
        return -p.gravity - np.asarray(d_air) / p.m
    acc = -(body_to_world(state.attitude[2]) @ res.total) / p.m
    acc[2] = 0.0
    return acc


# ---------------------------------------------------------------- tracking

@dataclass
class Reference:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray


@dataclass
class AirCommand:
    thrust: float
    attitude: np.ndarray
    torque: np.ndarray
    accel: np.ndarray
    saturated: bool

    @property
    def input(self) -> FlightInput:
        return FlightInput(self.thrust, self.torque)


@dataclass
class LandCommand:
    input: LandInput
    accel: np.ndarray
    saturated: bool


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def attitude_torque(att_des, state: VehicleState, gains: GainSpec, p: VehicleParams) -> np.ndarray:
    err = np.asarray(att_des, dtype=float) - state.attitude
    err[2] = _wrap(err[2])
    alpha = gains.att_kp * err - gains.att_kd * state.angular_velocity
    return np.asarray(p.J) * alpha + gyroscopic(state.angular_velocity, p.J)


def track_air(ref: Reference, state: VehicleState, d_hat, gains: GainSpec, p: VehicleParams,
              yaw: float | None = None) -> AirCommand:
    """Position PD with disturbance feed-forward, inverted into thrust and attitude.

    ``d_hat`` is the lumped flight disturbance (gravity included); pass the
    nominal ``-g`` vector for a controller without estimation.
    """
    d = -p.gravity if d_hat is None else np.asarray(d_hat, dtype=float)
    a_des = (ref.acceleration + gains.air_kp * (ref.position - state.position)
             + gains.air_kd * (ref.velocity - state.velocity))
    f = p.m * (a_des - d)
    # per-axis thrust limits, the same box the flight bounds are built from
    lim = np.array(p.f1_max)
    lo = np.array([-lim[0], -lim[1], 0.05 * p.m * p.g])
    f_clamped = np.clip(f, lo, lim)
    saturated = bool(np.any(f_clamped != f))
    f = f_clamped
    horiz = math.hypot(f[0], f[1])
    horiz_max = f[2] * math.tan(math.radians(gains.tilt_limit_deg))
    if horiz > horiz_max:
        f[:2] *= horiz_max / horiz
        saturated = True
    mag = float(np.linalg.norm(f))
    if mag > p.f1_max[2]:
        f *= p.f1_max[2] / mag
        mag = p.f1_max[2]
        saturated = True
    psi = state.attitude[2] if yaw is None else yaw
    b = f / mag
    c, s = math.cos(psi), math.sin(psi)
    phi = math.asin(max(-1.0, min(1.0, b[0] * s - b[1] * c)))
    theta = math.atan2(b[0] * c + b[1] * s, b[2])
    att = vec3(phi, theta, psi)
    accel = f / p.m + d
    return AirCommand(mag, att, attitude_torque(att, state, gains, p), accel, saturated)


def track_land(ref: Reference, state: VehicleState, d_hat, gains: GainSpec,
               p: VehicleParams) -> LandCommand:
    """Longitudinal PD along the heading plus heading PD toward the reference tangent.

    The vehicle may reverse: the heading target is whichever of the tangent or
    its opposite is closer to the current yaw.
    """
    d = vec3() if d_hat is None else np.asarray(d_hat, dtype=float)
    e = ref.position - state.position
    e[2] = 0.0
    a_des = ref.acceleration + gains.land_kp * e + gains.land_kd * (ref.velocity - state.velocity)
    a_des[2] = 0.0
    need = a_des - d
    psi = state.attitude[2]
    steer = ref.velocity[:2] + gains.lateral_k * e[:2]
    if np.linalg.norm(steer) > 0.1:
        target = math.atan2(steer[1], steer[0])
        if abs(_wrap(target - psi)) > math.pi / 2:
            target = _wrap(target + math.pi)
    else:
        target = psi
    heading = np.array([math.cos(psi), math.sin(psi), 0.0])
    u_long = float(need @ heading)
    alpha = gains.heading_kp * _wrap(target - psi) - gains.heading_kd * state.angular_velocity[2]
    f_max = p.wheel_force_max
    diff = p.J[2] * alpha / p.w  # right minus left
    total = p.m * u_long / 2.0  # left plus right
    saturated = False
    if abs(diff) > 2 * f_max:
        diff = math.copysign(2 * f_max, diff)
        saturated = True
    room = 2 * f_max - abs(diff)
    if abs(total) > room:
        total = math.copysign(room, total)
        saturated = True
    left, right = (total - diff) / 2.0, (total + diff) / 2.0
    accel = heading * (2.0 * total / p.m) + d
    accel[2] = 0.0
    return LandCommand(LandInput(left, right), accel, saturated)


# ---------------------------------------------------------------- logging

@dataclass
class Metrics:
    time_s: float = 0.0
    energy_wh: float = 0.0
    rmse_m: float = 0.0
    success: bool = False
    empty: bool = False

    def as_dict(self) -> dict:
        return {"time_s": self.time_s, "energy_wh": self.energy_wh, "rmse_m": self.rmse_m,
                "success": self.success}


LOG_COLUMNS = (
    ["t", "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw",
     "ref_x", "ref_y", "ref_z", "ref_vx", "ref_vy", "ref_vz", "ref_ax", "ref_ay", "ref_az",
     "dhat_x", "dhat_y", "dhat_z", "dtrue_x", "dtrue_y", "dtrue_z",
     "amin_x", "amin_y", "amin_z", "amax_x", "amax_y", "amax_z",
     "acmd_x", "acmd_y", "acmd_z", "aact_x", "aact_y", "aact_z",
     "u1", "u2", "u3", "u4", "rpm1", "rpm2", "rpm3", "rpm4", "power_w", "mode", "saturated"]
)


@dataclass
class SimLog:
    """Per control tick records. ``rows`` follow ``LOG_COLUMNS``."""

    dt: float
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    plan_latencies: list = field(default_factory=list)
    arrival_time: float | None = None
    failure: str | None = None
    goal: list | None = None

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        vals = [r[i] for r in self.rows]
        if name == "mode":
            return np.array(vals, dtype=object)
        return np.array(vals, dtype=float)

    def columns(self, *names) -> np.ndarray:
        return np.stack([self.column(n) for n in names], axis=-1) if self.rows else np.zeros((0, len(names)))

    @property
    def time(self):
        return self.column("t")

    @property
    def position(self):
        return self.columns("x", "y", "z")

    @property
    def reference(self):
        return self.columns("ref_x", "ref_y", "ref_z")

    @property
    def modes(self) -> list:
        return list(self.column("mode"))

    @property
    def rpms(self):
        return self.columns("rpm1", "rpm2", "rpm3", "rpm4")

    def switch_events(self) -> list:
        return [e for e in self.events if e["kind"] == "switch"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for row in self.rows:
                w.writerow([_fmt(v) for v in row])

    @classmethod
    def from_csv(cls, path) -> "SimLog":
        """Rows of a log written by ``to_csv`` (events are not stored there)."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != LOG_COLUMNS:
                raise ValueError(f"{path}: header does not match the log columns")
            rows = []
            mode_i = LOG_COLUMNS.index("mode")
            sat_i = LOG_COLUMNS.index("saturated")
            for rec in reader:
                row = []
                for i, v in enumerate(rec):
                    if i == mode_i:
                        row.append(v)
                    elif i == sat_i:
                        row.append(bool(int(v)))
                    else:
                        row.append(float(v))
                rows.append(row)
        dt = rows[1][0] - rows[0][0] if len(rows) > 1 else 0.0
        return cls(dt, rows)

    def events_json(self) -> str:
        return json.dumps(self.events, indent=2)


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def compute_metrics(log: SimLog, p: VehicleParams) -> Metrics:
    if len(log) == 0:
        return Metrics(empty=True)
    t = log.time
    modes = log.modes
    rpms = log.rpms
    power = np.array([float(np.sum(motor_power(r, p.k_torque_air if m == Mode.AIR.value else p.k_torque_land)))
                      for r, m in zip(rpms, modes)])
    energy_wh = float(np.sum(power) * log.dt / 3600.0)
    err = log.position - log.reference
    rmse = float(math.sqrt(np.mean(np.sum(err * err, axis=1))))
    success = log.arrival_time is not None and log.failure is None
    task_time = (log.arrival_time if success else t[-1] + log.dt) - 0.0
    return Metrics(float(task_time), energy_wh, rmse, bool(success))


# ---------------------------------------------------------------- closed loop

class ScenarioPlanner:
    """Replanning and mode-switch callbacks bound to one scenario run."""

    def __init__(self, cfg: ScenarioConfig, esdf: Esdf, fields: DisturbanceField, p: VehicleParams):
        self.cfg = cfg
        self.esdf = esdf
        self.fields = fields
        self.p = p
        self.goal = np.asarray(cfg.goal, dtype=float)
        self.adaptive = cfg.planner_variant == "adaptive"
        self.search_cfg = cfg.search
        if not self.adaptive:
            from dataclasses import replace
            self.search_cfg = replace(cfg.search, w_e=0.0, w_d=0.0)

    def bounds(self, mode: Mode, d_hat) -> tuple[AccelBounds, AccelBounds]:
        if not self.adaptive:
            return nominal_bounds(self.p)
        nominal_air, nominal_land = nominal_bounds(self.p)
        if mode is Mode.AIR:
            # low flight keeps the land x/y widths but feels the same wind
            return air_bounds(d_hat, self.p), land_bounds(vec3(d_hat[0], d_hat[1], 0.0), self.p)
        return nominal_air, land_bounds(d_hat, self.p)

    def plan(self, start, mode, d_hat, t, vertical=None, waypoints=(), goal=None) -> Plan:
        pos, vel, acc = start
        ba, bl = self.bounds(mode, d_hat)
        return plan_path(pos, vel, self.goal if goal is None else goal, self.esdf, ba, bl, self.search_cfg,
                         self.cfg.optimize, mode=mode, vertical=vertical, t0=t, start_acc=acc,
                         waypoints=waypoints)

    def _horizon(self, plan: Plan, t: float) -> np.ndarray:
        s = self.cfg.switch
        return plan.horizon(t, s.horizon, s.horizon_spacing, s.horizon_offset)

    def detour(self, start, d_hat, t):
        pos = start[0]
        heading = self.goal[:2] - pos[:2]
        n = np.linalg.norm(heading)
        if n < 1e-6:
            return None
        heading /= n
        perp = np.array([-heading[1], heading[0]])
        ahead = min(self.cfg.sim.detour_ahead, n)
        best = None
        for side in (1.0, -1.0):
            wp = pos.copy()
            wp[:2] += ahead * heading + side * self.cfg.switch.detour_offset * perp
            wp[2] = 0.0
            grid = self.esdf.grid
            if not grid.in_bounds(wp) or grid.is_occupied(wp):
                continue
            try:
                plan = self.plan(start, Mode.LAND, d_hat, t, waypoints=[wp])
            except SearchError:
                continue
            if self.fields.exposure(plan.positions(), self.p.g) >= self.cfg.switch.delta_ground:
                continue
            if best is None or plan.cost < best.cost:
                best = plan
        return None if best is None else Candidate(best, self._horizon(best, t))

    def lift(self, start, d_hat, t):
        # climb through a waypoint ahead so the horizon clears r_thr
        pos = start[0]
        heading = self.goal[:2] - pos[:2]
        n = np.linalg.norm(heading)
        heading = heading / n if n > 1e-6 else np.zeros(2)
        wp = pos.copy()
        wp[:2] += min(self.cfg.sim.lift_ahead, n) * heading
        wp[2] = self.cfg.sim.lift_altitude
        grid = self.esdf.grid
        waypoints = [wp] if grid.in_bounds(wp) and not grid.is_occupied(wp) else []
        try:
            plan = self.plan(start, Mode.LAND, d_hat, t, vertical="up", waypoints=waypoints)
        except SearchError:
            return None
        plan.mode = Mode.AIR
        return Candidate(plan, self._horizon(plan, t))

    def descend(self, start, d_hat, t):
        # Land mode cannot reach an airborne goal without a ground trigger.
        if self.goal[2] > self.cfg.switch.r_thr:
            return None
        pos = start[0]
        heading = self.goal[:2] - pos[:2]
        n = np.linalg.norm(heading)
        heading = heading / n if n > 1e-6 else np.zeros(2)
        look = self.cfg.sim.descent_lookahead
        for dist in (look, 0.5 * look, 2.0 * look, 0.0):
            target = pos.copy()
            target[:2] += min(dist, n) * heading
            target[2] = 0.0
            grid = self.esdf.grid
            if not grid.in_bounds(target) or grid.is_occupied(target):
                continue
            try:
                plan = self.plan(start, Mode.AIR, d_hat, t, vertical="down", goal=target)
            except SearchError:
                continue
            return Candidate(plan, self._horizon(plan, t))
        return None


def run_scenario(cfg: ScenarioConfig, esdf: Esdf | None = None) -> tuple[SimLog, Metrics]:
    p = cfg.params
    sim = cfg.sim
    if esdf is None:
        esdf = build_esdf(cfg.build_grid(), cfg.map.truncation)
    fields = DisturbanceField.from_config(cfg)
    planner = ScenarioPlanner(cfg, esdf, fields, p)
    adaptive = planner.adaptive
    gains = cfg.gains
    rng = np.random.default_rng(sim.seed)

    substeps = max(1, int(round(sim.dt_control / sim.dt_dynamics)))
    dt_dyn = sim.dt_control / substeps
    replan_every = max(1, int(round(1.0 / (sim.replan_hz * sim.dt_control))))
    n_ticks = int(math.ceil(sim.timeout / sim.dt_control))
    goal = planner.goal
    tol = cfg.search.goal_tolerance

    # unlogged hold at the start pose so the estimator meets the mission converged
    n_settle = int(round(max(sim.settle_time, 0.0) / sim.dt_control))
    t_first = -n_settle * sim.dt_control
    state = cfg.start.to_state().replace(time=t_first)
    anchor = state.position.copy()
    estimator = UdeEstimator(cfg.observer_T, state.mode, nominal_disturbance(state.mode, p),
                             state.velocity, t_first)
    log = SimLog(sim.dt_control, goal=goal.tolist())
    plan: Plan | None = None
    last_switch = -math.inf
    landing = False
    failures = 0
    u0_prev = None
    v_meas = state.velocity.copy()

    def event(kind, t, **info):
        log.events.append({"kind": kind, "t": round(t, 9), **info})

    def ref_at(t):
        if plan is None:
            return anchor.copy(), vec3(), vec3()
        return plan.reference(t)

    def start_state(t):
        pr, vr, ar = ref_at(t)
        if plan is None or np.linalg.norm(state.position - pr) > sim.reset_distance:
            pr, vr, ar = state.position.copy(), state.velocity.copy(), vec3()
        pr, vr, ar = np.array(pr), np.array(vr), np.array(ar)
        if state.mode is Mode.LAND:
            pr[2] = vr[2] = ar[2] = 0.0
        return pr, vr, ar

    def fresh_state(t):
        pr, vr, ar = state.position.copy(), state.velocity.copy(), vec3()
        if state.mode is Mode.LAND:
            pr[2] = vr[2] = 0.0
        return pr, vr, ar

    for k in range(-n_settle, n_ticks):
        t = k * sim.dt_control
        settling = k < 0
        if u0_prev is not None:
            est = estimator.update(v_meas, u0_prev, sim.dt_control)
            if est.error:
                event("observer_reset", t)
        d_hat = estimator.d_hat.copy()
        nominal = nominal_disturbance(state.mode, p)

        if not settling and k % replan_every == 0 and sim.planner_enabled and not landing:
            start = start_state(t)
            decision = None
            if adaptive:
                decision = decide(
                    state.mode,
                    d_hat if state.mode is Mode.AIR else nominal_disturbance(Mode.AIR, p),
                    d_hat if state.mode is Mode.LAND else vec3(),
                    plan.horizon(t, cfg.switch.horizon, cfg.switch.horizon_spacing)
                    if plan is not None else start[0][None, :],
                    cfg.switch,
                    detour_planner=lambda: planner.detour(start, d_hat, t),
                    vertical_planner=(lambda: planner.lift(start, d_hat, t)) if state.mode is Mode.LAND
                    else (lambda: planner.descend(start, d_hat, t)),
                    time_in_mode=t - last_switch,
                    since_reset=estimator.since_reset(),
                    g=p.g,
                )
                if decision.action is not SwitchAction.NONE or decision.detour_attempted \
                        or decision.vertical_attempted or decision.error:
                    log.decisions.append((t, state.mode, decision))
                if decision.error:
                    event("decision_error", t, error=decision.error)
            if decision is not None and decision.action is SwitchAction.SWITCHED_TO_AIR:
                plan = decision.plan
                plan.t0 = t
                state = state.replace(mode=Mode.AIR, attitude=vec3(0.0, 0.0, state.attitude[2]),
                                      angular_velocity=vec3())
                estimator.reset(Mode.AIR, nominal_disturbance(Mode.AIR, p), state.velocity, t)
                last_switch = t
                event("switch", t, action=decision.action.value, to=Mode.AIR.value,
                      magnitude=decision.triggering_magnitude)
            elif decision is not None and decision.action is SwitchAction.SWITCHED_TO_LAND:
                plan = decision.plan
                landing = True
                last_switch = t
                event("switch", t, action=decision.action.value, to=Mode.LAND.value,
                      magnitude=decision.triggering_magnitude)
            elif decision is not None and decision.action is SwitchAction.DETOUR_REPLANNED:
                plan = decision.plan
                event("detour", t, magnitude=decision.triggering_magnitude)
            else:
                try:
                    new = planner.plan(start, state.mode, d_hat, t)
                    log.plan_latencies.append(new.latency.get("total", 0.0))
                    plan = new
                    failures = 0
                except SearchError as exc:
                    failures += 1
                    event("replan_failed", t, reason=str(exc))
                    if plan is None or failures > 10:
                        log.failure = f"planner failure: {exc}"
                        break
            d_hat = estimator.d_hat.copy()

        if landing and plan is not None and t >= plan.t_end and state.position[2] > sim.touchdown_height:
            # the descent search stops inside its goal ball; finish straight down
            p_end = plan.reference(t)[0]
            plan = transfer_plan(p_end, vec3(p_end[0], p_end[1], 0.0), t, Mode.AIR)
            event("final_descent", t)
        if landing and state.position[2] <= sim.touchdown_height:
            landing = False
            pos = state.position.copy()
            pos[2] = 0.0
            state = VehicleState(pos, vec3(state.velocity[0], state.velocity[1], 0.0),
                                 vec3(0.0, 0.0, state.attitude[2]), vec3(0.0, 0.0, state.angular_velocity[2]),
                                 Mode.LAND, state.time)
            estimator.reset(Mode.LAND, vec3(), state.velocity, t)
            event("touchdown", t)
            try:
                plan = planner.plan(fresh_state(t), Mode.LAND, estimator.d_hat.copy(), t)
            except SearchError as exc:
                log.failure = f"planner failure after touchdown: {exc}"
                break
            d_hat = estimator.d_hat.copy()
            nominal = nominal_disturbance(Mode.LAND, p)

        pr, vr, ar = ref_at(t)
        ref = Reference(np.asarray(pr, float), np.asarray(vr, float), np.asarray(ar, float))
        if state.mode is Mode.LAND:
            ref.position[2] = ref.velocity[2] = ref.acceleration[2] = 0.0
        ff = d_hat
        if state.mode is Mode.AIR:
            cmd = track_air(ref, state, ff, gains, p)
            inp = cmd.input
            bounds = air_bounds(d_hat if adaptive else nominal, p)
        else:
            cmd = track_land(ref, state, ff, gains, p)
            inp = cmd.input
            bounds = land_bounds(d_hat if adaptive else nominal, p)

        rpm = motor_rpms(state.mode, inp, p)
        k_t = p.k_torque_air if state.mode is Mode.AIR else p.k_torque_land
        power = float(np.sum(motor_power(rpm, k_t)))
        v_before = state.velocity.copy()
        mode_before = state.mode
        u0_sum = vec3()
        d_true_sum = vec3()
        try:
            for _ in range(substeps):
                d_air, res = sample_disturbance(fields, state, p, state.time)
                d_true_sum += true_disturbance_accel(state, d_air, res, p)
                if state.mode is Mode.AIR:
                    inp = FlightInput(cmd.thrust, attitude_torque(cmd.attitude, state, gains, p))
                    u0_sum += nominal_input_air(cmd.thrust, state.attitude, p)
                else:
                    u0_sum += nominal_input_land(inp.forces, state.attitude[2], p)
                state = step(state, inp, Disturbances(d_air, res), dt_dyn, p)
                if state.mode is Mode.AIR and state.position[2] < 0.0:
                    pos = state.position.copy()
                    vel = state.velocity.copy()
                    pos[2] = 0.0
                    vel[2] = max(vel[2], 0.0)
                    state = state.replace(position=pos, velocity=vel)
        except IntegrationError as exc:
            log.failure = str(exc)
            break
        u0_prev = u0_sum / substeps
        a_act = (state.velocity - v_before) / sim.dt_control
        v_meas = state.velocity + (rng.normal(0.0, sim.velocity_noise, 3) if sim.velocity_noise > 0 else 0.0)
        if mode_before is Mode.LAND:
            u0_prev[2] = 0.0

        if settling:
            continue
        # reference at the row's timestamp, matching the post-step state
        lr = Reference(*(np.array(x, dtype=float) for x in ref_at(t + sim.dt_control)))
        if mode_before is Mode.LAND:
            lr.position[2] = lr.velocity[2] = lr.acceleration[2] = 0.0
        att = state.attitude
        u = ([cmd.thrust, *cmd.torque.tolist()] if mode_before is Mode.AIR
             else [inp.left, inp.right, 0.0, 0.0])
        log.rows.append([
            t + sim.dt_control, *state.position.tolist(), *state.velocity.tolist(), *att.tolist(),
            *lr.position.tolist(), *lr.velocity.tolist(), *lr.acceleration.tolist(),
            *d_hat.tolist(), *(d_true_sum / substeps).tolist(),
            *bounds.lower.tolist(), *bounds.upper.tolist(),
            *cmd.accel.tolist(), *a_act.tolist(),
            *[float(x) for x in u], *rpm.tolist(), power, mode_before.value, bool(cmd.saturated),
        ])
        if np.linalg.norm(state.position - goal) <= tol and not landing:
            log.arrival_time = t + sim.dt_control
            event("arrived", log.arrival_time)
            break
    else:
        log.failure = "timeout"
        event("timeout", n_ticks * sim.dt_control)

    metrics = compute_metrics(log, p)
    return log, metrics


def replay_observer(log: SimLog, cfg: ScenarioConfig, T: float | None = None) -> np.ndarray:
    """Re-run the estimator on a logged run from logged velocities and inputs.

    Returns the estimate per log row (mode changes reset the filter). The
    replay starts cold from the nominal disturbance, whereas a live run has
    already converged during its unlogged settle period, so early rows differ.
    """
    p = cfg.params
    T = cfg.observer_T if T is None else T
    modes = log.modes
    vel = log.columns("vx", "vy", "vz")
    att = log.columns("roll", "pitch", "yaw")
    u = log.columns("u1", "u2", "u3", "u4")
    out = np.zeros((len(log), 3))
    start = cfg.start.to_state()
    est = UdeEstimator(T, Mode(modes[0]), nominal_disturbance(Mode(modes[0]), p), start.velocity, 0.0)
    prev_att = start.attitude
    for i in range(len(log)):
        mode = Mode(modes[i])
        if mode is not est.mode:
            est.reset(mode, nominal_disturbance(mode, p), vel[i - 1] if i else start.velocity, log.dt * i)
        if mode is Mode.AIR:
            u0 = nominal_input_air(u[i, 0], prev_att, p)
        else:
            u0 = nominal_input_land(u[i, :2], prev_att[2], p)
            u0[2] = 0.0
        out[i] = est.update(vel[i], u0, log.dt).d_hat
        prev_att = att[i]
    return out


def write_outputs(log: SimLog, metrics: Metrics, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"log": out / "simlog.csv", "metrics": out / "metrics.json", "events": out / "events.json"}
    log.to_csv(paths["log"])
    paths["metrics"].write_text(json.dumps(metrics.as_dict(), indent=2) + "\n")
    paths["events"].write_text(log.events_json() + "\n")
    return paths


def timed_run(cfg: ScenarioConfig):
    tic = time.perf_counter()
    log, metrics = run_scenario(cfg)
    return log, metrics, time.perf_counter() - tic
