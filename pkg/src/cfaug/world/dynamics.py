"""Forward dynamics: kinematic bicycle ego, scripted actors, light cycling,
and per-step infraction detection."""
from __future__ import annotations

import numpy as np

from ..geometry import normalize_angle, rects_overlap
from .types import (
    Actor,
    ActorKind,
    Behavior,
    Control,
    CrossingScript,
    DepartSchedule,
    EgoState,
    InfractionEvent,
    InfractionKind,
    LightPhase,
    TrafficLight,
    WorldState,
)

_COLLISION_KIND = {
    ActorKind.PEDESTRIAN: InfractionKind.PEDESTRIAN_COLLISION,
    ActorKind.VEHICLE: InfractionKind.VEHICLE_COLLISION,
    ActorKind.CYCLIST: InfractionKind.VEHICLE_COLLISION,
}


def _advance_ego(world: WorldState, control: Control) -> EgoState:
    cfg = world.cfg
    ego = world.ego
    v = ego.speed
    # position first: per-step displacement is exactly v * dt along heading
    x = ego.position[0] + v * cfg.dt * np.cos(ego.heading)
    y = ego.position[1] + v * cfg.dt * np.sin(ego.heading)
    steer_angle = control.steer * cfg.max_steer_rad
    heading = normalize_angle(ego.heading + v / cfg.wheelbase * np.tan(steer_angle) * cfg.dt)
    if control.brake:
        v_next = max(0.0, v - cfg.a_max * cfg.dt)
    else:
        drag = cfg.drag_c0 + cfg.drag_c1 * v if v > 0.0 else 0.0
        v_next = float(np.clip(v + (control.throttle * cfg.a_max - drag) * cfg.dt, 0.0, cfg.v_max))
    return EgoState((float(x), float(y)), heading, v_next)


def _advance_actor(actor: Actor, world: WorldState) -> Actor:
    cfg = world.cfg
    if actor.behavior == Behavior.CRUISE and isinstance(actor.script, DepartSchedule):
        if actor.speed <= 0.0 and world.time_step >= actor.script.depart_step:
            actor = Actor(actor.id, actor.kind, actor.position, actor.heading,
                          actor.script.cruise_speed, actor.behavior, actor.script)
    if actor.behavior == Behavior.STATIC or actor.speed <= 0.0 and actor.behavior != Behavior.CROSSING:
        return actor
    if actor.behavior == Behavior.CRUISE:
        arc, lat = world.route.project(actor.position)
        arc2 = arc + actor.speed * cfg.dt
        if arc2 >= world.route.length:
            # keep rolling past the route end on the final heading
            x = actor.position[0] + actor.speed * cfg.dt * np.cos(actor.heading)
            y = actor.position[1] + actor.speed * cfg.dt * np.sin(actor.heading)
            return Actor(actor.id, actor.kind, (float(x), float(y)), actor.heading,
                         actor.speed, actor.behavior, actor.script)
        x0, y0 = world.route.point_at(arc2)
        h = world.route.tangent_at(arc2)
        nx, ny = -np.sin(h), np.cos(h)
        pos = (float(x0 + lat * nx), float(y0 + lat * ny))
        return Actor(actor.id, actor.kind, pos, normalize_angle(h), actor.speed,
                     actor.behavior, actor.script)
    # CROSSING: wait for the ego trigger, walk a fixed distance, then halt
    script = actor.script
    if script is None:
        return actor
    active = script.active
    if not active:
        dx = world.ego.position[0] - actor.position[0]
        dy = world.ego.position[1] - actor.position[1]
        active = float(np.hypot(dx, dy)) <= script.trigger_dist
    if not active or script.travelled >= script.travel_limit:
        if active != script.active:
            new_script = CrossingScript(script.direction, script.trigger_dist,
                                        script.travel_limit, script.travelled, active)
            return Actor(actor.id, actor.kind, actor.position, actor.heading,
                         actor.speed, actor.behavior, new_script)
        return actor
    step_len = actor.speed * cfg.dt
    pos = (
        float(actor.position[0] + script.direction[0] * step_len),
        float(actor.position[1] + script.direction[1] * step_len),
    )
    new_script = CrossingScript(script.direction, script.trigger_dist, script.travel_limit,
                                script.travelled + step_len, True)
    return Actor(actor.id, actor.kind, pos, actor.heading, actor.speed, actor.behavior, new_script)


def _advance_light(light: TrafficLight, world: WorldState) -> TrafficLight:
    cfg = world.cfg
    durations = {
        LightPhase.GREEN: cfg.green_s,
        LightPhase.YELLOW: cfg.yellow_s,
        LightPhase.RED: cfg.red_s,
    }
    order = (LightPhase.GREEN, LightPhase.YELLOW, LightPhase.RED)
    phase, timer = light.phase, light.phase_timer + cfg.dt
    while timer >= durations[phase]:
        timer -= durations[phase]
        phase = order[(order.index(phase) + 1) % 3]
    return TrafficLight(light.id, light.stop_line, phase, timer)


def step(world: WorldState, control: Control) -> tuple[WorldState, list[InfractionEvent]]:
    """Advance one tick; returns the new state and the infractions it produced.

    Collision events are reported for every step in which the ego footprint
    overlaps an actor footprint; red-light / offroad / layout events fire on
    the transition.
    """
    control = control.clamped()
    ego = _advance_ego(world, control)
    actors = tuple(_advance_actor(a, world) for a in world.actors)
    lights = tuple(_advance_light(li, world) for li in world.lights)
    new = WorldState(
        time_step=world.time_step + 1,
        ego=ego,
        actors=actors,
        lights=lights,
        route=world.route,
        route_length=world.route_length,
        scenario_id=world.scenario_id,
        seed=world.seed,
        cfg=world.cfg,
    )
    return new, _detect_infractions(world, new)


def _detect_infractions(old: WorldState, new: WorldState) -> list[InfractionEvent]:
    cfg = new.cfg
    events: list[InfractionEvent] = []
    t = new.time_step

    ego_rect = new.ego_rect()
    for actor in new.actors:
        if rects_overlap(ego_rect, actor.rect()):
            events.append(InfractionEvent(_COLLISION_KIND[actor.kind], t, actor.id))

    old_arc, old_lat = old.route.project(old.ego.position)
    new_arc, new_lat = new.route.project(new.ego.position)

    for light in old.lights:
        if light.phase != LightPhase.RED:
            continue
        line_arc, _ = old.route.project(light.stop_line)
        if old_arc < line_arc <= new_arc:
            events.append(InfractionEvent(InfractionKind.RED_LIGHT_VIOLATION, t, light.id))

    off_now = abs(new_lat) > cfg.road_half_width
    off_before = abs(old_lat) > cfg.road_half_width
    if off_now and not off_before:
        events.append(InfractionEvent(InfractionKind.OFFROAD, t))
    barrier = cfg.road_half_width + cfg.barrier_margin
    if abs(new_lat) > barrier and abs(old_lat) <= barrier:
        events.append(InfractionEvent(InfractionKind.LAYOUT_COLLISION, t))
    return events
