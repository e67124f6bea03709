"""Disturbance-adaptive acceleration bounds for both locomotion modes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Mode, VehicleParams, vec3


@dataclass(frozen=True, eq=False)
class AccelBounds:
    lower: np.ndarray
    upper: np.ndarray
    mode: Mode

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("bounds need three axes")
        if np.any(lo > hi):
            raise ValueError(f"empty interval: {lo} > {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, a, tol: float = 1e-9) -> bool:
        a = np.asarray(a, dtype=float)
        return bool(np.all(a >= self.lower - tol) and np.all(a <= self.upper + tol))

    def with_z(self, lo: float, hi: float) -> "AccelBounds":
        lower = self.lower.copy()
        upper = self.upper.copy()
        lower[2], upper[2] = lo, hi
        return AccelBounds(lower, upper, self.mode)

    def as_dict(self) -> dict:
        return {"mode": self.mode.value, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


def air_bounds(d1_hat, p: VehicleParams) -> AccelBounds:
    d = np.asarray(d1_hat, dtype=float)
    fx, fy, fz = p.f1_max
    lower = np.array([-fx / p.m + d[0], -fy / p.m + d[1], d[2]])
    upper = np.array([fx / p.m + d[0], fy / p.m + d[1], fz / p.m + d[2]])
    return AccelBounds(lower, upper, Mode.AIR)


def land_bounds(d2_hat, p: VehicleParams) -> AccelBounds:
    d = np.asarray(d2_hat, dtype=float)
    fx, fy = p.f2_max
    lower = np.array([-fx / p.m + d[0], -fy / p.m + d[1], 0.0])
    upper = np.array([fx / p.m + d[0], fy / p.m + d[1], 0.0])
    return AccelBounds(lower, upper, Mode.LAND)


def nominal_bounds(p: VehicleParams) -> tuple[AccelBounds, AccelBounds]:
    """Bounds with no wind and no ground resistance (the fixed baseline)."""
    return air_bounds(-p.gravity, p), land_bounds(vec3(), p)
