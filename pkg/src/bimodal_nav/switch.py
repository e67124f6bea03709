"""Autonomous Land/Air mode switching.

``decide`` runs once per planning cycle. A strong ground disturbance first
tries a lateral detour, then a lift-off search; a strong wind in flight
tries a descent search. A mode change only happens when every horizon point
of the candidate plan lies on the far side of ``r_thr``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .core import GRAVITY, Mode

log = logging.getLogger(__name__)


class SwitchAction(str, enum.Enum):
    NONE = "None"
    DETOUR_REPLANNED = "DetourReplanned"
    SWITCHED_TO_AIR = "SwitchedToAir"
    SWITCHED_TO_LAND = "SwitchedToLand"


@dataclass
class SwitchConfig:
    delta_air: float = 1.5
    delta_ground: float = 1.0
    r_thr: float = 0.3
    horizon: int = 20
    horizon_spacing: float = 0.1
    horizon_offset: float = 1.0
    min_dwell: float = 1.0
    detour_offset: float = 1.5
    transient: float = 0.1

    def __post_init__(self):
        if self.delta_air <= 0 or self.delta_ground <= 0:
            raise ValueError("disturbance thresholds must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must hold at least one point")


@dataclass
class Candidate:
    """A replanned trajectory offered by a planner callback."""

    plan: Any
    horizon: np.ndarray


@dataclass
class ModeDecision:
    next_mode: Mode
    action: SwitchAction = SwitchAction.NONE
    triggering_magnitude: float = 0.0
    plan: Any = None
    horizon: Optional[np.ndarray] = None
    detour_attempted: bool = False
    detour_found: bool = False
    vertical_attempted: bool = False
    error: Optional[str] = None
    notes: list = field(default_factory=list)


def gravity_compensated_air_magnitude(d1_hat, g: float = GRAVITY) -> float:
    d = np.asarray(d1_hat, dtype=float)
    return float(np.linalg.norm(d + np.array([0.0, 0.0, g])))


def decide(mode: Mode, d1_hat, d2_hat, horizon, cfg: SwitchConfig,
           detour_planner: Callable[[], Optional[Candidate]],
           vertical_planner: Callable[[], Optional[Candidate]],
           time_in_mode: float = float("inf"), since_reset: float = float("inf"),
           g: float = GRAVITY) -> ModeDecision:
    """One pass of the switching strategy.

    ``horizon`` is the current trajectory's look-ahead (unused for the
    decision itself, kept for logging). ``detour_planner`` returns a feasible
    detour or ``None``; ``vertical_planner`` returns the lift-off (Land) or
    descent (Air) candidate or ``None``.
    """
    mode = Mode(mode)
    horizon = np.asarray(horizon, dtype=float)
    if horizon.size == 0:
        raise ValueError("horizon must not be empty")
    if mode is Mode.LAND:
        magnitude = float(np.linalg.norm(d2_hat))
        threshold = cfg.delta_ground
    else:
        magnitude = gravity_compensated_air_magnitude(d1_hat, g)
        threshold = cfg.delta_air
    decision = ModeDecision(mode, SwitchAction.NONE, magnitude, horizon=horizon)
    if since_reset < cfg.transient:
        decision.notes.append("estimator transient")
        return decision
    if time_in_mode < cfg.min_dwell:
        decision.notes.append("dwell")
        return decision
    if magnitude <= threshold:
        return decision

    try:
        if mode is Mode.LAND:
            decision.detour_attempted = True
            detour = detour_planner()
            if detour is not None:
                decision.detour_found = True
                decision.action = SwitchAction.DETOUR_REPLANNED
                decision.plan = detour.plan
                decision.horizon = np.asarray(detour.horizon)
                return decision
            decision.vertical_attempted = True
            lift = vertical_planner()
            if lift is not None:
                decision.horizon = np.asarray(lift.horizon)
                if np.all(decision.horizon[:, 2] > cfg.r_thr):
                    decision.next_mode = Mode.AIR
                    decision.action = SwitchAction.SWITCHED_TO_AIR
                    decision.plan = lift.plan
            return decision
        decision.vertical_attempted = True
        descent = vertical_planner()
        if descent is not None:
            decision.horizon = np.asarray(descent.horizon)
            if np.all(decision.horizon[:, 2] <= cfg.r_thr):
                decision.next_mode = Mode.LAND
                decision.action = SwitchAction.SWITCHED_TO_LAND
                decision.plan = descent.plan
        return decision
    except Exception as exc:  # planner callbacks may fail in many ways
        log.error("mode switch planner failed: %s", exc)
        return ModeDecision(mode, SwitchAction.NONE, magnitude, horizon=horizon, error=str(exc),
                            detour_attempted=decision.detour_attempted,
                            vertical_attempted=decision.vertical_attempted)
