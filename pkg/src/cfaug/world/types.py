"""Core world-state types: immutable snapshots of the 2D lane world."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from ..config import WorldConfig
from ..geometry import Rect, Route, normalize_angle


class ActorKind(enum.IntEnum):
    NONE = 0
    VEHICLE = 1
    PEDESTRIAN = 2
    CYCLIST = 3
    TRAFFIC_LIGHT = 4


class Behavior(enum.IntEnum):
    STATIC = 0
    CRUISE = 1
    CROSSING = 2


class LightPhase(enum.IntEnum):
    GREEN = 1
    YELLOW = 2
    RED = 3


class InfractionKind(enum.Enum):
    PEDESTRIAN_COLLISION = "PEDESTRIAN_COLLISION"
    VEHICLE_COLLISION = "VEHICLE_COLLISION"
    LAYOUT_COLLISION = "LAYOUT_COLLISION"
    RED_LIGHT_VIOLATION = "RED_LIGHT_VIOLATION"
    OFFROAD = "OFFROAD"
    ROUTE_TIMEOUT = "ROUTE_TIMEOUT"


# footprint (length, width) per actor kind, meters
FOOTPRINTS: dict[ActorKind, tuple[float, float]] = {
    ActorKind.VEHICLE: (4.5, 2.0),
    ActorKind.PEDESTRIAN: (0.6, 0.6),
    ActorKind.CYCLIST: (1.8, 0.6),
}


@dataclass(frozen=True)
class EgoState:
    position: tuple[float, float]
    heading: float  # radians, (-pi, pi]
    speed: float  # m/s, >= 0


@dataclass(frozen=True)
class CrossingScript:
    """Scripted dart-out: walk along `direction` once ego is within trigger range."""

    direction: tuple[float, float]  # unit vector of travel
    trigger_dist: float  # ego distance that starts the walk
    travel_limit: float  # stop after moving this far
    travelled: float = 0.0
    active: bool = False


@dataclass(frozen=True)
class DepartSchedule:
    """A stopped cruiser that pulls away at a fixed step."""

    depart_step: int
    cruise_speed: float


@dataclass(frozen=True)
class Actor:
    id: int
    kind: ActorKind
    position: tuple[float, float]
    heading: float
    speed: float
    behavior: Behavior
    script: CrossingScript | DepartSchedule | None = None

    def rect(self) -> Rect:
        length, width = FOOTPRINTS[self.kind]
        return Rect(self.position[0], self.position[1], self.heading, length, width)


@dataclass(frozen=True)
class TrafficLight:
    id: int
    stop_line: tuple[float, float]
    phase: LightPhase
    phase_timer: float  # seconds spent in the current phase


@dataclass(frozen=True)
class Control:
    steer: float  # [-1, 1], positive steers left
    throttle: float  # [0, 1]
    brake: int  # {0, 1}

    def clamped(self) -> "Control":
        return Control(
            steer=float(np.clip(self.steer, -1.0, 1.0)),
            throttle=float(np.clip(self.throttle, 0.0, 1.0)),
            brake=1 if self.brake else 0,
        )


@dataclass(frozen=True)
class InfractionEvent:
    kind: InfractionKind
    time_step: int
    actor_id: int | None = None


@dataclass(frozen=True)
class SensorObs:
    """Noisy, range-limited view of the world used by the imitation learner."""

    ego_speed: float
    # fixed slot count of (rel_x, rel_y, rel_heading, speed, kind_code)
    detections: tuple[tuple[float, float, float, float, int], ...]
    visible_light_phase: str  # RED / YELLOW / GREEN / UNKNOWN
    route_context: tuple[tuple[float, float], ...]  # upcoming route points, ego frame


@dataclass(frozen=True)
class WorldState:
    time_step: int
    ego: EgoState
    actors: tuple[Actor, ...]
    lights: tuple[TrafficLight, ...]
    route: Route
    route_length: float
    scenario_id: int
    seed: int
    cfg: WorldConfig = field(default_factory=WorldConfig, repr=False)

    def ego_rect(self) -> Rect:
        return Rect(
            self.ego.position[0],
            self.ego.position[1],
            self.ego.heading,
            self.cfg.ego_length,
            self.cfg.ego_width,
        )

    def ego_arc(self) -> float:
        s, _ = self.route.project(self.ego.position)
        return s

    def with_ego(self, ego: EgoState) -> "WorldState":
        return replace(self, ego=ego)


def normalized_ego(position, heading: float, speed: float) -> EgoState:
    return EgoState(
        position=(float(position[0]), float(position[1])),
        heading=normalize_angle(heading),
        speed=max(0.0, float(speed)),
    )
