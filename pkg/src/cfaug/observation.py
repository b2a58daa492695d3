"""Nearest-four filtering of the privileged world and action discretization.

The filtered observation is the fixed 25-feature vector the tree classifier
(and the counterfactual search) operates on: ego speed plus four slots of
(rel_x, rel_y, rel_heading, speed, kind_code, light_phase_code), slots ordered
by distance and padded with sentinels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action import Action, ActionClass, implied_profile_speed
from .config import WorldConfig
from .geometry import normalize_angle, to_ego_frame
from .world.types import ActorKind, WorldState

N_SLOTS = 4
SLOT_WIDTH = 6
N_FEATURES = 1 + N_SLOTS * SLOT_WIDTH  # 25

SENTINEL_SLOT = (200.0, 0.0, 0.0, 0.0, int(ActorKind.NONE), 0)

# slot entity reference used by scene realization: ("actor"|"light", id) or None
SlotRef = tuple[str, int] | None


@dataclass(frozen=True)
class FilteredObs:
    ego_speed: float
    slots: tuple[tuple[float, float, float, float, int, int], ...]

    def flatten(self) -> np.ndarray:
        out = np.empty(N_FEATURES, dtype=np.float64)
        out[0] = self.ego_speed
        for k, slot in enumerate(self.slots):
            out[1 + k * SLOT_WIDTH : 1 + (k + 1) * SLOT_WIDTH] = slot
        return out

    @staticmethod
    def from_flat(vec: np.ndarray) -> "FilteredObs":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (N_FEATURES,):
            raise ValueError(f"expected a {N_FEATURES}-feature vector, got {vec.shape}")
        slots = []
        for k in range(N_SLOTS):
            base = 1 + k * SLOT_WIDTH
            slots.append(
                (
                    float(vec[base]),
                    float(vec[base + 1]),
                    float(vec[base + 2]),
                    float(vec[base + 3]),
                    int(round(vec[base + 4])),
                    int(round(vec[base + 5])),
                )
            )
        return FilteredObs(float(vec[0]), tuple(slots))


def slot_candidates(world: WorldState) -> list[tuple[float, int, SlotRef, tuple]]:
    """All dynamic actors and lights as (distance, id, ref, slot tuple)."""
    ego = world.ego
    out = []
    for actor in world.actors:
        rel_x, rel_y = to_ego_frame(actor.position, ego.position, ego.heading)
        dist = float(np.hypot(rel_x, rel_y))
        slot = (
            rel_x,
            rel_y,
            normalize_angle(actor.heading - ego.heading),
            actor.speed,
            int(actor.kind),
            0,
        )
        out.append((dist, actor.id, ("actor", actor.id), slot))
    for light in world.lights:
        rel_x, rel_y = to_ego_frame(light.stop_line, ego.position, ego.heading)
        dist = float(np.hypot(rel_x, rel_y))
        slot = (rel_x, rel_y, 0.0, 0.0, int(ActorKind.TRAFFIC_LIGHT), int(light.phase))
        out.append((dist, light.id, ("light", light.id), slot))
    out.sort(key=lambda item: (item[0], item[1]))
    return out


def filter_observation(world: WorldState) -> FilteredObs:
    """Nearest four actors/lights relative to the ego, sentinel padded."""
    obs, _ = filter_observation_with_refs(world)
    return obs


def filter_observation_with_refs(world: WorldState) -> tuple[FilteredObs, list[SlotRef]]:
    """Like filter_observation, plus which entity fills each slot."""
    candidates = slot_candidates(world)[:N_SLOTS]
    slots = [c[3] for c in candidates]
    refs: list[SlotRef] = [c[2] for c in candidates]
    while len(slots) < N_SLOTS:
        slots.append(SENTINEL_SLOT)
        refs.append(None)
    return FilteredObs(world.ego.speed, tuple(slots)), refs


def discretize_action(action: Action, cfg: WorldConfig | None = None) -> ActionClass:
    """Three-way longitudinal label: STOP on brake, otherwise GO above the
    cruise-fraction threshold, else SLOW."""
    cfg = cfg or WorldConfig()
    if action.brake:
        return ActionClass.STOP
    target = implied_profile_speed(action, cfg.dt)
    if target >= 0.8 * cfg.cruise_speed:
        return ActionClass.GO
    return ActionClass.SLOW


_FIELD_META = (
    ("rel_x", "m", False),
    ("rel_y", "m", False),
    ("rel_heading", "rad", False),
    ("speed", "m/s", False),
    ("kind_code", "enum", True),
    ("light_phase_code", "enum", False),
)


def feature_schema() -> list[dict]:
    """Ordered feature descriptors (name, index, unit, frozen flag)."""
    schema = [{"name": "ego_speed", "index": 0, "unit": "m/s", "frozen": False}]
    for k in range(N_SLOTS):
        for j, (name, unit, frozen) in enumerate(_FIELD_META):
            schema.append(
                {
                    "name": f"slot{k}_{name}",
                    "index": 1 + k * SLOT_WIDTH + j,
                    "unit": unit,
                    "frozen": frozen,
                }
            )
    return schema


def frozen_indices() -> tuple[int, ...]:
    """Indices that counterfactual search must never alter (identity features)."""
    return tuple(e["index"] for e in feature_schema() if e["frozen"])


def kind_code_index(slot: int) -> int:
    return 1 + slot * SLOT_WIDTH + 4


def phase_code_index(slot: int) -> int:
    return 1 + slot * SLOT_WIDTH + 5


def slot_feature_indices(slot: int) -> tuple[int, ...]:
    return tuple(range(1 + slot * SLOT_WIDTH, 1 + (slot + 1) * SLOT_WIDTH))
