"""The driving action: a 10-step waypoint trajectory plus accel and brake."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

N_WAYPOINTS = 10


class ActionClass(enum.IntEnum):
    GO = 0
    SLOW = 1
    STOP = 2


@dataclass(frozen=True)
class Action:
    """Ego-frame trajectory for the next 10 ticks.

    waypoints: exactly 10 (x, y) points, meters, ego frame at emission time.
    accel: signed target acceleration command, m/s^2.
    brake: 1 requests full braking (a braking action must have a decelerating
    waypoint profile: consecutive spacings non-increasing).
    """

    waypoints: tuple[tuple[float, float], ...]
    accel: float
    brake: int
    class_hint: ActionClass | None = None

    def __post_init__(self):
        if len(self.waypoints) != N_WAYPOINTS:
            raise ValueError(f"expected {N_WAYPOINTS} waypoints, got {len(self.waypoints)}")

    def spacings(self) -> np.ndarray:
        """Distances between consecutive waypoints (first one from the origin)."""
        pts = np.asarray(self.waypoints, dtype=np.float64)
        prev = np.vstack([[0.0, 0.0], pts[:-1]])
        d = pts - prev
        return np.hypot(d[:, 0], d[:, 1])


def implied_profile_speed(action: Action, dt: float, settle_horizon: float = 1.0) -> float:
    """Speed the trajectory is heading toward.

    Terminal waypoint spacing gives the end-of-horizon speed; a positive accel
    command still in effect extrapolates beyond the 1-second window (a vehicle
    pulling away from a stop is aiming for cruise, not for its speed at step 10).
    """
    spacing = action.spacings()
    terminal = float(spacing[-1]) / dt
    if action.accel > 0.0:
        terminal += action.accel * settle_horizon
    return max(0.0, terminal)


def project_waypoints(
    points: np.ndarray, v_max: float, dt: float, decelerating: bool
) -> tuple[tuple[float, float], ...]:
    """Clamp a raw waypoint sequence onto the feasible spacing envelope.

    Spacings are limited to v_max*dt; with `decelerating` they are additionally
    forced non-increasing. Directions of travel are preserved.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(N_WAYPOINTS, 2)
    prev = np.vstack([[0.0, 0.0], pts[:-1]])
    deltas = pts - prev
    norms = np.hypot(deltas[:, 0], deltas[:, 1])

    cap = v_max * dt
    out = []
    cursor = np.zeros(2)
    last_dir = np.array([1.0, 0.0])
    prev_len = np.inf
    for k in range(N_WAYPOINTS):
        length = min(norms[k], cap)
        if decelerating:
            length = min(length, prev_len)
        direction = deltas[k] / norms[k] if norms[k] > 1e-12 else last_dir
        cursor = cursor + direction * length
        out.append((float(cursor[0]), float(cursor[1])))
        last_dir = direction
        prev_len = length
    return tuple(out)
