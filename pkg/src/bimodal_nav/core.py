"""Shared domain types, occupancy grids and the Euclidean distance field.

Vectors are plain ``numpy`` arrays of shape ``(3,)``. Everything here is
treated as immutable once constructed.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

GRAVITY = 9.81


def vec3(x=0.0, y=0.0, z=0.0) -> np.ndarray:
    return np.array([x, y, z], dtype=float)


def as_vec3(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


class Mode(str, enum.Enum):
    LAND = "Land"
    AIR = "Air"


@dataclass(frozen=True)
class VehicleState:
    position: np.ndarray = field(default_factory=vec3)
    velocity: np.ndarray = field(default_factory=vec3)
    attitude: np.ndarray = field(default_factory=vec3)  # roll, pitch, yaw
    angular_velocity: np.ndarray = field(default_factory=vec3)
    mode: Mode = Mode.LAND
    time: float = 0.0

    def __post_init__(self):
        for name in ("position", "velocity", "attitude", "angular_velocity"):
            object.__setattr__(self, name, as_vec3(getattr(self, name), name))
        object.__setattr__(self, "mode", Mode(self.mode))

    def replace(self, **changes) -> "VehicleState":
        return replace(self, **changes)

    def is_consistent(self, tol: float = 1e-9) -> bool:
        if self.mode is Mode.LAND:
            return (abs(self.position[2]) <= tol and abs(self.attitude[0]) <= tol
                    and abs(self.attitude[1]) <= tol)
        return abs(self.attitude[0]) < math.pi / 2 and abs(self.attitude[1]) < math.pi / 2


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters of the bimodal vehicle.

    ``f1_max`` holds the per-axis maximum thrust (x, y, z) of the flight mode
    and ``f2_max`` the per-axis maximum driving force (x, y) of the land mode.
    Both are totals over all four motors. ``wheel_radius`` and
    ``rotor_torque_ratio`` turn commanded forces into motor torques for the
    energy model.
    """

    m: float = 2.0
    J: tuple = (0.02, 0.02, 0.04)
    f1_max: tuple = (14.715, 14.715, 29.43)
    f2_max: tuple = (6.0, 6.0)
    w: float = 0.2
    a: float = 0.15
    b: float = 0.15
    k_torque_air: float = 1e-8
    k_torque_land: float = 1e-5
    wheel_radius: float = 0.05
    rotor_torque_ratio: float = 0.02
    max_tilt: float = math.radians(30.0)
    g: float = GRAVITY

    def __post_init__(self):
        object.__setattr__(self, "J", tuple(float(j) for j in self.J))
        object.__setattr__(self, "f1_max", tuple(float(f) for f in self.f1_max))
        object.__setattr__(self, "f2_max", tuple(float(f) for f in self.f2_max))
        if self.m <= 0:
            raise ValueError("mass must be positive")
        if len(self.J) != 3 or min(self.J) <= 0:
            raise ValueError("inertia must have three positive entries")
        if len(self.f1_max) != 3 or min(self.f1_max) <= 0:
            raise ValueError("f1_max must have three positive entries")
        if len(self.f2_max) != 2 or min(self.f2_max) <= 0:
            raise ValueError("f2_max must have two positive entries")
        if min(self.w, self.a, self.b) <= 0:
            raise ValueError("wheel geometry must be positive")

    @classmethod
    def from_total_thrust(cls, f_total: float, max_tilt_deg: float = 30.0, **kw) -> "VehicleParams":
        """Per-axis thrust limits from a total thrust and a tilt limit."""
        fxy = f_total * math.sin(math.radians(max_tilt_deg))
        return cls(f1_max=(fxy, fxy, f_total), max_tilt=math.radians(max_tilt_deg), **kw)

    @property
    def gravity(self) -> np.ndarray:
        return vec3(0.0, 0.0, self.g)

    @property
    def wheel_force_max(self) -> float:
        # f2_max is the total over four wheels.
        return self.f2_max[0] / 4.0


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Boolean voxel map. Voxel ``i`` spans ``origin + [i, i+1) * resolution``."""

    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", as_vec3(self.origin, "origin"))
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 3 or occ.size == 0:
            raise ValueError("occupancy must be a non-empty 3-D array")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        occ = occ.copy()
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    @classmethod
    def empty(cls, size, resolution: float, origin=(0.0, 0.0, 0.0)) -> "OccupancyGrid":
        dims = tuple(max(1, int(round(s / resolution))) for s in size)
        return cls(origin=origin, resolution=resolution, occupancy=np.zeros(dims, dtype=bool))

    @property
    def dims(self) -> tuple:
        return self.occupancy.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.asarray(self.dims) * self.resolution

    def with_boxes(self, boxes) -> "OccupancyGrid":
        """Copy with every voxel whose center lies in any ``(lo, hi)`` box set."""
        occ = np.array(self.occupancy)
        centers = [self.origin[k] + (np.arange(self.dims[k]) + 0.5) * self.resolution for k in range(3)]
        for lo, hi in boxes:
            lo, hi = as_vec3(lo), as_vec3(hi)
            sel = [np.nonzero((c >= lo[k]) & (c <= hi[k]))[0] for k, c in enumerate(centers)]
            if all(len(s) for s in sel):
                occ[np.ix_(*sel)] = True
        return OccupancyGrid(self.origin, self.resolution, occ)

    def index_of(self, p) -> tuple:
        idx = np.floor((np.asarray(p, dtype=float) - self.origin) / self.resolution).astype(int)
        return tuple(int(i) for i in idx)

    def center_of(self, index) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=float) + 0.5) * self.resolution

    def in_bounds(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.origin) and np.all(p <= self.upper))

    def is_occupied(self, p) -> bool:
        idx = self.index_of(p)
        if any(i < 0 or i >= d for i, d in zip(idx, self.dims)):
            return False
        return bool(self.occupancy[idx])


@dataclass(frozen=True, eq=False)
class Esdf:
    grid: OccupancyGrid
    distance: np.ndarray
    truncation: float

    @property
    def origin(self):
        return self.grid.origin

    @property
    def resolution(self):
        return self.grid.resolution

    @property
    def dims(self):
        return self.grid.dims


def build_esdf(grid: OccupancyGrid, truncation: float = 2.0) -> Esdf:
    """Exact (unsigned) distance from every voxel center to the nearest
    occupied voxel center, clamped at ``truncation``."""
    occ = grid.occupancy
    if not occ.any():
        dist = np.full(occ.shape, float(truncation))
    else:
        # voxel units first: sqrt of an integer squared distance is correctly rounded
        dist = ndimage.distance_transform_edt(~occ) * grid.resolution
        dist = np.minimum(dist, truncation)
    dist = np.asarray(dist, dtype=float)
    dist.setflags(write=False)
    return Esdf(grid=grid, distance=dist, truncation=float(truncation))


def _trilinear_setup(esdf: Esdf, p):
    p = np.asarray(p, dtype=float)
    lo = esdf.origin
    hi = esdf.grid.upper
    oob = np.any((p < lo - 1e-12) | (p > hi + 1e-12), axis=-1)
    dims = np.asarray(esdf.dims)
    u = (p - lo) / esdf.resolution - 0.5
    u = np.clip(u, 0.0, dims - 1)
    i0 = np.minimum(np.floor(u).astype(int), np.maximum(dims - 2, 0))
    frac = u - i0
    i1 = np.minimum(i0 + 1, dims - 1)
    # degenerate axes (single voxel) have no interpolation partner
    frac = np.where(dims - 1 == 0, 0.0, frac)
    return oob, i0, i1, frac


def _corners(esdf: Esdf, i0, i1):
    D = esdf.distance
    x0, y0, z0 = i0[..., 0], i0[..., 1], i0[..., 2]
    x1, y1, z1 = i1[..., 0], i1[..., 1], i1[..., 2]
    return (D[x0, y0, z0], D[x1, y0, z0], D[x0, y1, z0], D[x1, y1, z0],
            D[x0, y0, z1], D[x1, y0, z1], D[x0, y1, z1], D[x1, y1, z1])


def query_distance(esdf: Esdf, p):
    """Trilinear distance at ``p`` (shape ``(..., 3)``).

    Returns ``(distance, out_of_bounds)``. Queries outside the map are clamped
    to the boundary and flagged.
    """
    oob, i0, i1, f = _trilinear_setup(esdf, p)
    c000, c100, c010, c110, c001, c101, c011, c111 = _corners(esdf, i0, i1)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    d = c0 * (1 - fz) + c1 * fz
    if np.ndim(d) == 0:
        return float(d), bool(oob)
    return d, oob


def query_distance_gradient(esdf: Esdf, p):
    """Distance and its spatial gradient of the trilinear interpolant.

    The gradient is zero along axes where the query was clamped.
    """
    p = np.asarray(p, dtype=float)
    oob, i0, i1, f = _trilinear_setup(esdf, p)
    c000, c100, c010, c110, c001, c101, c011, c111 = _corners(esdf, i0, i1)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    gx_ = 1 - fx
    gy_ = 1 - fy
    gz_ = 1 - fz
    d = (((c000 * gx_ + c100 * fx) * gy_ + (c010 * gx_ + c110 * fx) * fy) * gz_
         + ((c001 * gx_ + c101 * fx) * gy_ + (c011 * gx_ + c111 * fx) * fy) * fz)
    ddx = ((c100 - c000) * gy_ * gz_ + (c110 - c010) * fy * gz_
           + (c101 - c001) * gy_ * fz + (c111 - c011) * fy * fz)
    ddy = ((c010 - c000) * gx_ * gz_ + (c110 - c100) * fx * gz_
           + (c011 - c001) * gx_ * fz + (c111 - c101) * fx * fz)
    ddz = ((c001 - c000) * gx_ * gy_ + (c101 - c100) * fx * gy_
           + (c011 - c010) * gx_ * fy + (c111 - c110) * fx * fy)
    grad = np.stack([ddx, ddy, ddz], axis=-1) / esdf.resolution
    dims = np.asarray(esdf.dims)
    u = (p - esdf.origin) / esdf.resolution - 0.5
    clamped = (u < 0.0) | (u > dims - 1) | (dims - 1 == 0)
    grad = np.where(clamped, 0.0, grad)
    return d, grad, oob
