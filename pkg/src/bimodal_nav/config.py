"""Scenario configuration: schema, loading, validation and serialisation.

Scenario files are YAML documents. Every section maps onto a dataclass
below; unknown keys are rejected and missing keys take the dataclass
default. See ``docs/config.md`` for the full grammar.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import GRAVITY, Mode, OccupancyGrid, VehicleParams, VehicleState, vec3
from .optimize import OptimizeConfig
from .search import SearchConfig
from .switch import SwitchConfig


class ConfigError(ValueError):
    pass


@dataclass
class BoxSpec:
    min: list
    max: list


@dataclass
class MapSpec:
    size: list = field(default_factory=lambda: [10.0, 6.0, 3.0])
    resolution: float = 0.1
    origin: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    boxes: list = field(default_factory=list)  # list[BoxSpec]
    grid_file: typing.Optional[str] = None
    truncation: float = 2.0


@dataclass
class WindZone:
    """Axis-aligned box whose ``force`` is the wind term of the flight dynamics.

    The vector enters the translational dynamics with a minus sign, so a
    positive x component decelerates a vehicle flying towards +x. The
    optional gust adds ``gust_amplitude * sin(2 pi gust_frequency t)`` along
    the force direction. A positive ``edge`` ramps the zone linearly across
    each face over that width, centred on the face, so boxes sharing a face
    blend into each other without a step.
    """

    min: list
    max: list
    force: list
    gust_amplitude: float = 0.0
    gust_frequency: float = 0.0
    edge: float = 0.0


@dataclass
class ResistanceZone:
    min: list  # ground rectangle corners (x, y)
    max: list
    mu: float = 0.0
    mu_lat: float = 0.1
    k_m: float = 0.0


@dataclass
class GroundSpec:
    mu: float = 0.02
    mu_lat: float = 0.1
    k_m: float = 0.0


@dataclass
class StartSpec:
    position: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    velocity: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    yaw: float = 0.0
    mode: str = "Land"

    def to_state(self) -> VehicleState:
        pos = np.array(self.position, dtype=float)
        if Mode(self.mode) is Mode.LAND:
            pos[2] = 0.0
        return VehicleState(position=pos, velocity=self.velocity, attitude=vec3(0.0, 0.0, self.yaw),
                            mode=Mode(self.mode))


@dataclass
class VehicleSpec:
    m: float = 2.0
    J: list = field(default_factory=lambda: [0.02, 0.02, 0.04])
    f_total: float = 29.43
    max_tilt_deg: float = 30.0
    f2_max: list = field(default_factory=lambda: [6.0, 6.0])
    w: float = 0.2
    a: float = 0.15
    b: float = 0.15
    k_torque_air: float = 1e-8
    k_torque_land: float = 1e-5
    wheel_radius: float = 0.05
    rotor_torque_ratio: float = 0.02

    def to_params(self) -> VehicleParams:
        return VehicleParams.from_total_thrust(
            self.f_total, self.max_tilt_deg, m=self.m, J=tuple(self.J), f2_max=tuple(self.f2_max),
            w=self.w, a=self.a, b=self.b, k_torque_air=self.k_torque_air,
            k_torque_land=self.k_torque_land, wheel_radius=self.wheel_radius,
            rotor_torque_ratio=self.rotor_torque_ratio, g=GRAVITY)


@dataclass
class GainSpec:
    air_kp: float = 4.0
    air_kd: float = 3.0
    land_kp: float = 6.0
    land_kd: float = 4.0
    heading_kp: float = 8.0
    heading_kd: float = 1.0
    lateral_k: float = 1.0
    att_kp: float = 400.0
    att_kd: float = 40.0
    tilt_limit_deg: float = 60.0


@dataclass
class SimSpec:
    dt_dynamics: float = 0.002
    dt_control: float = 0.01
    replan_hz: float = 10.0
    timeout: float = 40.0
    velocity_noise: float = 0.0
    seed: int = 0
    planner_enabled: bool = True
    reset_distance: float = 1.0
    touchdown_height: float = 0.15
    detour_ahead: float = 2.0
    descent_lookahead: float = 1.5
    lift_ahead: float = 3.0
    lift_altitude: float = 1.0
    settle_time: float = 3.0


@dataclass
class ExpectSpec:
    """Expected ordering of adaptive vs fixed-bounds metrics ("less" or "any")."""

    time: str = "any"
    energy: str = "any"
    rmse: str = "any"


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    map: MapSpec = field(default_factory=MapSpec)
    start: StartSpec = field(default_factory=StartSpec)
    goal: list = field(default_factory=lambda: [5.0, 0.0, 0.0])
    wind_zones: list = field(default_factory=list)  # list[WindZone]
    resistance_zones: list = field(default_factory=list)  # list[ResistanceZone]
    ground: GroundSpec = field(default_factory=GroundSpec)
    vehicle: VehicleSpec = field(default_factory=VehicleSpec)
    search: SearchConfig = field(default_factory=SearchConfig)
    optimize: OptimizeConfig = field(default_factory=OptimizeConfig)
    switch: SwitchConfig = field(default_factory=SwitchConfig)
    observer_T: float = 0.1
    planner_variant: str = "adaptive"
    gains: GainSpec = field(default_factory=GainSpec)
    sim: SimSpec = field(default_factory=SimSpec)
    expect: ExpectSpec = field(default_factory=ExpectSpec)
    source: typing.Optional[str] = None

    def build_grid(self) -> OccupancyGrid:
        m = self.map
        if m.grid_file:
            path = Path(m.grid_file)
            if not path.is_absolute() and self.source:
                path = Path(self.source).parent / path
            occ = np.load(path)
            grid = OccupancyGrid(m.origin, m.resolution, occ.astype(bool))
        else:
            grid = OccupancyGrid.empty(m.size, m.resolution, m.origin)
        return grid.with_boxes([(b.min, b.max) for b in m.boxes])

    @property
    def params(self) -> VehicleParams:
        return self.vehicle.to_params()

    def with_variant(self, variant: str) -> "ScenarioConfig":
        return dataclasses.replace(self, planner_variant=variant)


_LIST_ITEM_TYPES = {
    ("MapSpec", "boxes"): BoxSpec,
    ("ScenarioConfig", "wind_zones"): WindZone,
    ("ScenarioConfig", "resistance_zones"): ResistanceZone,
}


def _convert(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        key = f"{where}.{name}" if where else name
        hint = hints[name]
        item_cls = _LIST_ITEM_TYPES.get((cls.__name__, name))
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _convert(hint, value or {}, key)
        elif item_cls is not None:
            if not isinstance(value, list):
                raise ConfigError(f"{key}: expected a list")
            kwargs[name] = [_convert(item_cls, v, f"{key}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[name] = _scalar(hint, value, key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _scalar(hint, value, key):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if value is None:
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if hint is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v for v in value]
    return value


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if not (f.name == "source")}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def from_dict(data: dict, source: str | None = None) -> ScenarioConfig:
    cfg = _convert(ScenarioConfig, data or {}, "")
    cfg.source = source
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    if cfg.planner_variant not in ("adaptive", "fixed_bounds"):
        raise ConfigError("planner_variant: must be 'adaptive' or 'fixed_bounds'")
    try:
        Mode(cfg.start.mode)
    except ValueError:
        raise ConfigError("start.mode: must be 'Land' or 'Air'") from None
    if cfg.observer_T <= 0:
        raise ConfigError("observer_T: must be positive")
    for name, vec in (("goal", cfg.goal), ("start.position", cfg.start.position),
                      ("start.velocity", cfg.start.velocity)):
        if len(vec) != 3 or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vec):
            raise ConfigError(f"{name}: must be three finite numbers")
    if cfg.map.grid_file:
        path = Path(cfg.map.grid_file)
        if not path.is_absolute() and cfg.source:
            path = Path(cfg.source).parent / path
        if not path.exists():
            raise ConfigError(f"map.grid_file: {path} does not exist")
    for key in ("expect.time", "expect.energy", "expect.rmse"):
        val = getattr(cfg.expect, key.split(".")[1])
        if val not in ("less", "any"):
            raise ConfigError(f"{key}: must be 'less' or 'any'")
    try:
        grid = cfg.build_grid()
    except (ValueError, OSError) as exc:
        raise ConfigError(f"map: {exc}") from exc
    if not grid.in_bounds(cfg.goal):
        raise ConfigError(f"goal: {cfg.goal} lies outside the map")
    if grid.is_occupied(cfg.goal):
        raise ConfigError(f"goal: {cfg.goal} is inside an obstacle")
    start = cfg.start.to_state().position
    if not grid.in_bounds(start):
        raise ConfigError(f"start: {cfg.start.position} lies outside the map")
    if grid.is_occupied(start):
        raise ConfigError(f"start: {cfg.start.position} is inside an obstacle")
    try:
        cfg.params
    except ValueError as exc:
        raise ConfigError(f"vehicle: {exc}") from exc


def loads(text: str, source: str | None = None) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    return from_dict(data, source)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        builtin = Path(__file__).parent / "scenarios" / path.name
        if builtin.exists():
            path = builtin
        else:
            raise ConfigError(f"{path}: no such file")
    return loads(path.read_text(), str(path))


def dumps(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def builtin_scenarios() -> list[Path]:
    return sorted((Path(__file__).parent / "scenarios").glob("*.cfg"))
