"""Seeded scenario templates that stand in for recorded driving routes.

Each template builds a WorldState from (name, seed) alone: same inputs, same
bits. Routes get a random global pose so nothing downstream can rely on
axis-aligned coordinates.
"""
from __future__ import annotations

import numpy as np

from ..config import WorldConfig
from ..geometry import Route, curved_route, normalize_angle, rects_overlap, straight_route
from .types import (
    Actor,
    ActorKind,
    Behavior,
    CrossingScript,
    DepartSchedule,
    EgoState,
    LightPhase,
    TrafficLight,
    WorldState,
)

TEMPLATES = (
    "clear_road",
    "lead_vehicle",
    "red_light",
    "crossing_pedestrian",
    "occluded_pedestrian",
    "mixed",
)


class UnknownTemplate(ValueError):
    """Raised when a scenario name is not one of TEMPLATES."""


def _rng_for(template: str, seed: int) -> np.random.Generator:
    idx = TEMPLATES.index(template)
    return np.random.default_rng(np.random.SeedSequence((idx, seed & 0xFFFFFFFFFFFFFFFF)))


def _base_route(rng: np.random.Generator, cfg: WorldConfig, length: float, curve_amp: float) -> Route:
    origin = rng.uniform(-50.0, 50.0, size=2)
    heading = rng.uniform(-np.pi, np.pi)
    if curve_amp > 0.0:
        period = rng.uniform(80.0, 140.0)
        return curved_route(origin, heading, length, cfg.route_spacing, curve_amp, period)
    return straight_route(origin, heading, length, cfg.route_spacing)


def _on_route(route: Route, arc: float, lateral: float) -> tuple[tuple[float, float], float]:
    """Position and tangent heading at (arc, signed lateral offset)."""
    x, y = route.point_at(arc)
    h = route.tangent_at(arc)
    nx, ny = -np.sin(h), np.cos(h)
    return (x + lateral * nx, y + lateral * ny), h


def _lead_vehicle(rng, route, cfg, actor_id) -> Actor:
    arc = float(rng.uniform(22.0, 38.0))
    pos, h = _on_route(route, arc, 0.0)
    if rng.random() < 0.5:
        # stopped now, pulls away later: stop-and-go boundary material
        depart = int(rng.integers(60, 140))
        cruise = float(rng.uniform(4.0, 5.5))
        return Actor(
            actor_id, ActorKind.VEHICLE, pos, h, 0.0, Behavior.CRUISE,
            DepartSchedule(depart, cruise),
        )
    speed = float(rng.uniform(3.5, 5.0))
    return Actor(actor_id, ActorKind.VEHICLE, pos, h, speed, Behavior.CRUISE)


def _traffic_light(rng, route, light_id, arc_lo=50.0, arc_hi=80.0) -> TrafficLight:
    arc = float(rng.uniform(arc_lo, arc_hi))
    pos, _ = _on_route(route, arc, 0.0)
    return TrafficLight(light_id, pos, LightPhase.RED, float(rng.uniform(0.0, 6.0)))


def _crossing_pedestrian(rng, route, actor_id, arc_lo=55.0, arc_hi=85.0) -> Actor:
    arc = float(rng.uniform(arc_lo, arc_hi))
    side = 1.0 if rng.random() < 0.5 else -1.0
    lateral = side * float(rng.uniform(3.0, 4.5))
    pos, h = _on_route(route, arc, lateral)
    walk = float(rng.uniform(1.2, 1.8))
    trigger = float(rng.uniform(22.0, 28.0))
    # walks straight across the road: direction is the inward route normal
    nh = h + (np.pi / 2.0 if side < 0 else -np.pi / 2.0)
    direction = (float(np.cos(nh)), float(np.sin(nh)))
    script = CrossingScript(direction, trigger, travel_limit=abs(lateral) + 4.5)
    return Actor(actor_id, ActorKind.PEDESTRIAN, pos, nh, walk, Behavior.CROSSING, script)


def _occluded_pair(rng, route, first_id) -> tuple[Actor, Actor]:
    arc = float(rng.uniform(55.0, 80.0))
    side = 1.0 if rng.random() < 0.5 else -1.0
    park_pos, park_h = _on_route(route, arc, side * 2.8)
    parked = Actor(first_id, ActorKind.VEHICLE, park_pos, park_h, 0.0, Behavior.STATIC)
    ped_arc = arc + float(rng.uniform(2.0, 4.0))
    ped_lat = side * float(rng.uniform(3.6, 4.2))
    ped_pos, ped_route_h = _on_route(route, ped_arc, ped_lat)
    nh = ped_route_h + (np.pi / 2.0 if side < 0 else -np.pi / 2.0)
    walk = float(rng.uniform(1.6, 2.0))
    trigger = float(rng.uniform(17.0, 22.0))
    script = CrossingScript(
        (float(np.cos(nh)), float(np.sin(nh))), trigger, travel_limit=abs(ped_lat) + 4.5
    )
    ped = Actor(first_id + 1, ActorKind.PEDESTRIAN, ped_pos, nh, walk, Behavior.CROSSING, script)
    return parked, ped


def _clutter_vehicle(rng, route, actor_id) -> Actor:
    arc = float(rng.uniform(20.0, route.length - 20.0))
    side = 1.0 if rng.random() < 0.5 else -1.0
    lateral = side * float(rng.uniform(5.5, 8.0))
    pos, h = _on_route(route, arc, lateral)
    return Actor(actor_id, ActorKind.VEHICLE, pos, h, 0.0, Behavior.STATIC)


def spawn_scenario(
    template: str, seed: int, cfg: WorldConfig | None = None
) -> WorldState:
    """Build the initial WorldState for a named template.

    Raises UnknownTemplate for names outside TEMPLATES. Actor footprints are
    re-sampled (bounded retries) until pairwise disjoint, so the returned
    state always satisfies the no-overlap spawn invariant.
    """
    if template not in TEMPLATES:
        raise UnknownTemplate(f"unknown scenario template: {template!r}")
    cfg = cfg or WorldConfig()
    rng = _rng_for(template, seed)

    actors: list[Actor] = []
    lights: list[TrafficLight] = []

    if template == "clear_road":
        route = _base_route(rng, cfg, 200.0, 0.0)
    elif template == "lead_vehicle":
        route = _base_route(rng, cfg, float(rng.uniform(cfg.route_min, cfg.route_max)), 0.0)
        actors.append(_lead_vehicle(rng, route, cfg, 1))
    elif template == "red_light":
        route = _base_route(rng, cfg, float(rng.uniform(cfg.route_min, cfg.route_max)), 0.0)
        lights.append(_traffic_light(rng, route, 101))
    elif template == "crossing_pedestrian":
        route = _base_route(rng, cfg, float(rng.uniform(cfg.route_min, cfg.route_max)), 0.0)
        actors.append(_crossing_pedestrian(rng, route, 1))
    elif template == "occluded_pedestrian":
        route = _base_route(rng, cfg, float(rng.uniform(cfg.route_min, cfg.route_max)), 0.0)
        parked, ped = _occluded_pair(rng, route, 1)
        actors.extend([parked, ped])
    else:  # mixed
        amp = float(rng.uniform(0.0, 3.0))
        route = _base_route(rng, cfg, float(rng.uniform(cfg.route_min, cfg.route_max)), amp)
        next_id = 1
        if rng.random() < 0.6:
            actors.append(_lead_vehicle(rng, route, cfg, next_id))
            next_id += 1
        if rng.random() < 0.6:
            lights.append(_traffic_light(rng, route, 101, 55.0, 85.0))
        if rng.random() < 0.6:
            actors.append(_crossing_pedestrian(rng, route, next_id, 95.0, 125.0))
            next_id += 1
        for _ in range(int(rng.integers(0, 3))):
            actors.append(_clutter_vehicle(rng, route, next_id))
            next_id += 1

    ego = EgoState(route.point_at(0.0), normalize_angle(route.tangent_at(0.0)), cfg.cruise_speed)
    world = WorldState(
        time_step=0,
        ego=ego,
        actors=tuple(actors),
        lights=tuple(lights),
        route=route,
        route_length=route.length,
        scenario_id=TEMPLATES.index(template),
        seed=seed,
        cfg=cfg,
    )
    world = _resolve_overlaps(world, rng)
    return world


def _resolve_overlaps(world: WorldState, rng: np.random.Generator, max_tries: int = 40) -> WorldState:
    """Nudge overlapping spawned actors along the route until footprints clear."""
    actors = list(world.actors)
    rects = [a.rect() for a in actors]
    ego_rect = world.ego_rect()
    for i, actor in enumerate(actors):
        tries = 0
        while tries < max_tries and (
            rects_overlap(rects[i], ego_rect)
            or any(rects_overlap(rects[i], rects[j]) for j in range(len(actors)) if j != i)
        ):
            arc, lat = world.route.project(actor.position)
            arc = min(world.route.length - 5.0, arc + float(rng.uniform(6.0, 12.0)))
            pos, h = _on_route(world.route, arc, lat)
            heading = actor.heading if actor.behavior == Behavior.CROSSING else h
            actor = Actor(
                actor.id, actor.kind, pos, heading, actor.speed, actor.behavior, actor.script
            )
            actors[i] = actor
            rects[i] = actor.rect()
            tries += 1
    return WorldState(
        time_step=world.time_step,
        ego=world.ego,
        actors=tuple(actors),
        lights=world.lights,
        route=world.route,
        route_length=world.route_length,
        scenario_id=world.scenario_id,
        seed=world.seed,
        cfg=world.cfg,
    )
