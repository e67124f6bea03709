"""Uncertainty and disturbance estimator shared by both locomotion modes.

The lumped disturbance ``d`` of ``r'' = u + d`` is recovered by low-pass
filtering the mismatch between the measured acceleration and the nominal
input through ``G(s) = 1 / (T s + 1)``. The filter is discretised with an
exact zero-order hold so it is stable for any step size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Mode, VehicleParams, vec3
from .dynamics import drive_matrix, mass_matrix, thrust_axis


@dataclass(frozen=True)
class DisturbanceEstimate:
    d_hat: np.ndarray
    mode: Mode
    timestamp: float
    error: bool = False


def nominal_input_air(thrust: float, attitude, p: VehicleParams) -> np.ndarray:
    return thrust * thrust_axis(attitude) / p.m


def nominal_input_land(forces, psi: float, p: VehicleParams) -> np.ndarray:
    f = np.asarray(getattr(forces, "forces", forces), dtype=float)
    return np.linalg.solve(mass_matrix(p), drive_matrix(psi) @ f)


def nominal_disturbance(mode: Mode, p: VehicleParams) -> np.ndarray:
    """Disturbance expected with no wind and no resistance (gravity in the air)."""
    return -p.gravity if Mode(mode) is Mode.AIR else vec3()


class UdeEstimator:
    """Running disturbance estimate.

    ``update`` takes the current measured velocity and the nominal input that
    was applied over the last interval and returns a snapshot.
    """

    def __init__(self, T: float = 0.1, mode: Mode = Mode.LAND, d0=None, v0=None, t0: float = 0.0):
        if not T > 0:
            raise ValueError("time constant T must be positive")
        self.T = float(T)
        self.mode = Mode(mode)
        self.reset(d0=d0, v0=v0, t0=t0)

    def reset(self, mode: Mode | None = None, d0=None, v0=None, t0: float | None = None):
        if mode is not None:
            self.mode = Mode(mode)
        self.d_hat = vec3() if d0 is None else np.array(d0, dtype=float)
        self.v_prev = None if v0 is None else np.array(v0, dtype=float)
        self.u0_integral = vec3()
        if t0 is not None:
            self.time = float(t0)
            self.reset_time = float(t0)
        self._mask()

    def _mask(self):
        if self.mode is Mode.LAND:
            self.d_hat[2] = 0.0

    def snapshot(self, error: bool = False) -> DisturbanceEstimate:
        return DisturbanceEstimate(self.d_hat.copy(), self.mode, self.time, error)

    def since_reset(self) -> float:
        return self.time - self.reset_time

    def update(self, v_now, u0_sample, dt: float) -> DisturbanceEstimate:
        if not dt > 0:
            raise ValueError("dt must be positive")
        v_now = np.asarray(v_now, dtype=float)
        u0 = np.asarray(u0_sample, dtype=float)
        self.time += dt
        if not (np.all(np.isfinite(v_now)) and np.all(np.isfinite(u0))):
            self.reset(t0=self.time)
            return self.snapshot(error=True)
        if self.v_prev is None:
            # first sample only seeds the velocity difference
            self.v_prev = v_now.copy()
            return self.snapshot()
        implied = (v_now - self.v_prev) / dt - u0
        alpha = math.exp(-dt / self.T)
        self.d_hat = alpha * self.d_hat + (1.0 - alpha) * implied
        self.v_prev = v_now.copy()
        self.u0_integral = self.u0_integral + u0 * dt
        self._mask()
        return self.snapshot()
