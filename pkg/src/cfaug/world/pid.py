"""Waypoint-tracking PID: lateral on heading error, longitudinal on speed error."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..action import Action, implied_profile_speed
from ..geometry import to_ego_frame
from .types import Control, WorldState


@dataclass
class _PidState:
    integral: float = 0.0
    prev_error: float | None = None


@dataclass
class PidController:
    """Keeps integral/derivative state across the steps of one episode."""

    lateral: _PidState = field(default_factory=_PidState)
    longitudinal: _PidState = field(default_factory=_PidState)

    def control(self, world: WorldState, action: Action) -> Control:
        cfg = world.cfg

        target = _target_waypoint(world, action)
        heading_err = float(np.arctan2(target[1], target[0])) if target is not None else 0.0
        steer = _pid(self.lateral, heading_err, cfg.lat_kp, cfg.lat_ki, cfg.lat_kd,
                     cfg.dt, cfg.integral_clamp)

        speed_err = implied_profile_speed(action, cfg.dt) - world.ego.speed
        throttle = _pid(self.longitudinal, speed_err, cfg.lon_kp, cfg.lon_ki, cfg.lon_kd,
                        cfg.dt, cfg.integral_clamp)

        if action.brake:
            return Control(steer=float(np.clip(steer, -1.0, 1.0)), throttle=0.0, brake=1)
        return Control(
            steer=float(np.clip(steer, -1.0, 1.0)),
            throttle=float(np.clip(throttle, 0.0, 1.0)),
            brake=0,
        )


def _pid(state: _PidState, error: float, kp: float, ki: float, kd: float,
         dt: float, clamp: float) -> float:
    state.integral = float(np.clip(state.integral + error * dt, -clamp, clamp))
    deriv = 0.0 if state.prev_error is None else (error - state.prev_error) / dt
    state.prev_error = error
    return kp * error + ki * state.integral + kd * deriv


def _target_waypoint(world: WorldState, action: Action) -> tuple[float, float] | None:
    """Nearest upcoming waypoint in the current ego frame.

    Waypoints are expressed in the frame the action was produced in; here the
    action is consumed on the same step, so the frames coincide.
    """
    for wp in action.waypoints:
        if float(np.hypot(wp[0], wp[1])) > 0.3 and wp[0] > 0.0:
            return wp
    return None


def pid_control(world: WorldState, action: Action, controller: PidController | None = None) -> Control:
    """One control step; a fresh (zero-state) controller is used when none is given."""
    return (controller or PidController()).control(world, action)
