"""Rigid-body models of the flight and wheeled modes plus the motor energy model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Mode, VehicleParams, VehicleState, vec3


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlightInput:
    thrust: float = 0.0
    torque: np.ndarray = field(default_factory=vec3)


@dataclass(frozen=True)
class LandInput:
    """Per-wheel driving forces of the left (1, 4) and right (2, 3) pairs."""

    left: float = 0.0
    right: float = 0.0

    @property
    def forces(self) -> np.ndarray:
        return np.array([self.left, self.right], dtype=float)


@dataclass(frozen=True)
class GroundResistance:
    """Per-wheel resistive forces, wheels ordered front-left, front-right,
    rear-right, rear-left. Positive values oppose forward (x) / leftward (y)
    body motion, i.e. they enter the dynamics with a minus sign."""

    rx: tuple = (0.0, 0.0, 0.0, 0.0)
    ry: tuple = (0.0, 0.0, 0.0, 0.0)
    extra_moment: float = 0.0

    @property
    def total(self) -> np.ndarray:
        return vec3(sum(self.rx), sum(self.ry), 0.0)


@dataclass(frozen=True)
class Disturbances:
    d_air: np.ndarray = field(default_factory=vec3)
    resistance: GroundResistance = field(default_factory=GroundResistance)
    torque: np.ndarray = field(default_factory=vec3)


def thrust_axis(attitude) -> np.ndarray:
    phi, theta, psi = attitude
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cpsi, spsi = math.cos(psi), math.sin(psi)
    return np.array([
        cphi * sth * cpsi + sphi * spsi,
        cphi * sth * spsi - sphi * cpsi,
        cth * cphi,
    ])


def flight_accel(state: VehicleState, inp: FlightInput, d_air, p: VehicleParams) -> np.ndarray:
    return (inp.thrust * thrust_axis(state.attitude) - np.asarray(d_air, dtype=float)
            - p.m * p.gravity) / p.m


def gyroscopic(rates, J) -> np.ndarray:
    dphi, dtheta, dpsi = rates
    Jx, Jy, Jz = J
    return np.array([
        (Jy - Jz) * dpsi * dtheta,
        (Jz - Jx) * dphi * dpsi,
        (Jx - Jy) * dphi * dtheta,
    ])


def flight_angular_accel(state: VehicleState, inp: FlightInput, n, p: VehicleParams) -> np.ndarray:
    tau = np.asarray(inp.torque, dtype=float)
    return (tau - gyroscopic(state.angular_velocity, p.J) - np.asarray(n, dtype=float)) / np.asarray(p.J)


def drive_matrix(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[2 * c, 2 * c], [2 * s, 2 * s], [0.0, 0.0]])


def body_to_world(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def mass_matrix(p: VehicleParams) -> np.ndarray:
    return np.diag([p.m, p.m, 1.0])


def land_accel(state: VehicleState, inp: LandInput, d_land, p: VehicleParams) -> np.ndarray:
    psi = state.attitude[2]
    rhs = drive_matrix(psi) @ inp.forces - body_to_world(psi) @ np.asarray(d_land, dtype=float)
    acc = np.linalg.solve(mass_matrix(p), rhs)
    acc[2] = 0.0
    return acc


def resistive_moment(res: GroundResistance, p: VehicleParams) -> float:
    rx1, rx2, rx3, rx4 = res.rx
    ry1, ry2, ry3, ry4 = res.ry
    return (((rx2 + rx3) - (rx1 + rx4)) * p.w / 2.0
            + (ry1 + ry2) * p.b - (ry3 + ry4) * p.a)


def land_yaw_accel(inp: LandInput, m_r: float, p: VehicleParams) -> float:
    return ((-inp.left + inp.right) * p.w - m_r) / p.J[2]


def _derivative(y: np.ndarray, mode: Mode, inp, dist: Disturbances, p: VehicleParams) -> np.ndarray:
    # y = [pos(3), vel(3), att(3), rates(3)]
    st = VehicleState(position=y[0:3], velocity=y[3:6], attitude=y[6:9],
                      angular_velocity=y[9:12], mode=mode)
    dy = np.empty(12)
    dy[0:3] = y[3:6]
    if mode is Mode.AIR:
        dy[3:6] = flight_accel(st, inp, dist.d_air, p)
        dy[6:9] = y[9:12]
        dy[9:12] = flight_angular_accel(st, inp, dist.torque, p)
    else:
        dy[3:6] = land_accel(st, inp, dist.resistance.total, p)
        m_r = resistive_moment(dist.resistance, p) + dist.resistance.extra_moment
        dy[6:9] = (0.0, 0.0, y[11])
        dy[9:12] = (0.0, 0.0, land_yaw_accel(inp, m_r, p))
    return dy


def step(state: VehicleState, inp, disturbances: Disturbances | None, dt: float,
         p: VehicleParams) -> VehicleState:
    """Advance one classical RK4 step with inputs and disturbances held constant."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    mode = state.mode
    if mode is Mode.AIR and not isinstance(inp, FlightInput):
        raise TypeError("Air mode needs a FlightInput")
    if mode is Mode.LAND and not isinstance(inp, LandInput):
        raise TypeError("Land mode needs a LandInput")
    dist = disturbances or Disturbances()
    y = np.concatenate([state.position, state.velocity, state.attitude, state.angular_velocity])
    try:
        with np.errstate(invalid="ignore", over="ignore"):
            k1 = _derivative(y, mode, inp, dist, p)
            k2 = _derivative(y + 0.5 * dt * k1, mode, inp, dist, p)
            k3 = _derivative(y + 0.5 * dt * k2, mode, inp, dist, p)
            k4 = _derivative(y + dt * k3, mode, inp, dist, p)
            y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    except ValueError as exc:  # an intermediate stage left the finite range
        raise IntegrationError(f"non-finite state near t={state.time + dt:.4f}") from exc
    if not np.all(np.isfinite(y)):
        raise IntegrationError(f"non-finite state at t={state.time + dt:.4f}")
    if mode is Mode.LAND:
        y[2] = 0.0
        y[5] = 0.0
        y[6:8] = 0.0
        y[9:11] = 0.0
    return VehicleState(position=y[0:3], velocity=y[3:6], attitude=y[6:9],
                        angular_velocity=y[9:12], mode=mode, time=state.time + dt)


def motor_power(rpm, k_torque: float):
    """Mechanical power (W) of a motor spinning at ``rpm``."""
    rpm = np.asarray(rpm, dtype=float)
    if np.any(rpm < 0):
        raise ValueError("rpm must be non-negative")
    torque = k_torque * rpm ** 2
    omega = 2.0 * math.pi / 60.0 * rpm
    out = torque * omega
    return float(out) if out.ndim == 0 else out


def rpm_from_torque(torque, k_torque: float):
    return np.sqrt(np.maximum(np.asarray(torque, dtype=float), 0.0) / k_torque)


def motor_rpms(mode: Mode, inp, p: VehicleParams) -> np.ndarray:
    """Per-motor rpm of the four active motors, from commanded forces.

    The commanded force is split equally over the rotors (flight) or taken per
    wheel (land), turned into a motor torque, and ``tau = k * rpm^2`` is inverted.
    """
    if mode is Mode.AIR:
        torque = np.full(4, abs(inp.thrust) / 4.0 * p.rotor_torque_ratio)
        return rpm_from_torque(torque, p.k_torque_air)
    forces = np.abs([inp.left, inp.right, inp.right, inp.left])
    return rpm_from_torque(forces * p.wheel_radius, p.k_torque_land)


def input_power(mode: Mode, inp, p: VehicleParams) -> float:
    k = p.k_torque_air if mode is Mode.AIR else p.k_torque_land
    return float(np.sum(motor_power(motor_rpms(mode, inp, p), k)))
