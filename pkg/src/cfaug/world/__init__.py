from .types import (
    Actor,
    ActorKind,
    Behavior,
    Control,
    EgoState,
    InfractionEvent,
    InfractionKind,
    LightPhase,
    SensorObs,
    TrafficLight,
    WorldState,
)
from .scenarios import TEMPLATES, UnknownTemplate, spawn_scenario
from .dynamics import step
from .sensors import render_sensors, sensor_rng
from .pid import PidController, pid_control

__all__ = [
    "Actor",
    "ActorKind",
    "Behavior",
    "Control",
    "EgoState",
    "InfractionEvent",
    "InfractionKind",
    "LightPhase",
    "SensorObs",
    "TrafficLight",
    "WorldState",
    "TEMPLATES",
    "UnknownTemplate",
    "spawn_scenario",
    "step",
    "render_sensors",
    "sensor_rng",
    "PidController",
    "pid_control",
]
