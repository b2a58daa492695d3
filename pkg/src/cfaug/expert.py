"""Rule-based privileged driver used as the label source for imitation.

Priority order (first match wins):
  1. vulnerable road user inside the forward corridor -> hard stop
  2. red (or stoppable yellow) light within braking range -> stop at the line
  3. close lead vehicle -> stop behind it if it stands, else match its speed
  4. otherwise cruise
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action import Action, ActionClass, N_WAYPOINTS
from .config import ExpertConfig
from .geometry import to_ego_frame
from .world.types import ActorKind, LightPhase, WorldState

RULE_VULNERABLE = 1
RULE_LIGHT = 2
RULE_LEAD = 3
RULE_CRUISE = 4


@dataclass(frozen=True)
class ExpertDecision:
    action: Action
    rule_index: int


def expert_act(world: WorldState, cfg: ExpertConfig | None = None) -> Action:
    return expert_decision(world, cfg).action


def expert_decision(world: WorldState, cfg: ExpertConfig | None = None) -> ExpertDecision:
    """Apply the priority rules to a world snapshot; exactly one rule fires."""
    cfg = cfg or ExpertConfig()
    wcfg = world.cfg
    ego_arc = world.ego_arc()
    v = world.ego.speed
    half_corridor = (wcfg.ego_width + cfg.corridor_extra_width) / 2.0

    # R1: pedestrian or cyclist in the forward corridor
    best_gap = None
    for actor in world.actors:
        if actor.kind not in (ActorKind.PEDESTRIAN, ActorKind.CYCLIST):
            continue
        arc, lat = world.route.project(actor.position)
        gap = arc - ego_arc
        if 0.0 < gap <= cfg.corridor_lookahead and abs(lat) <= half_corridor:
            if best_gap is None or gap < best_gap:
                best_gap = gap
    if best_gap is not None:
        action = _stop_profile(world, best_gap - cfg.ped_standoff)
        return ExpertDecision(action, RULE_VULNERABLE)

    # R2: red/yellow light with the stop line inside braking range
    braking = v * v / (2.0 * wcfg.a_max)
    best_d = None
    for light in world.lights:
        line_arc, _ = world.route.project(light.stop_line)
        d = line_arc - ego_arc
        if d <= 0.0 or d > braking + cfg.light_margin:
            continue
        must_stop = light.phase == LightPhase.RED or (
            light.phase == LightPhase.YELLOW and d >= braking
        )
        if must_stop and (best_d is None or d < best_d):
            best_d = d
    if best_d is not None:
        action = _stop_profile(world, best_d)
        return ExpertDecision(action, RULE_LIGHT)

    # R3: lead vehicle inside the headway window
    lead = None
    for actor in world.actors:
        if actor.kind != ActorKind.VEHICLE:
            continue
        arc, lat = world.route.project(actor.position)
        gap = arc - ego_arc
        if gap <= 0.0 or abs(lat) > half_corridor:
            continue
        headway = gap / v if v > 0.1 else np.inf
        if gap < cfg.close_gap or headway < cfg.headway_s:
            if lead is None or gap < lead[0]:
                lead = (gap, actor)
    if lead is not None:
        gap, actor = lead
        if actor.speed < cfg.lead_stop_speed:
            action = _stop_profile(world, gap - cfg.lead_standoff)
        else:
            action = _ramp_profile(world, target=actor.speed)
        return ExpertDecision(action, RULE_LEAD)

    # R4: clear road
    return ExpertDecision(_ramp_profile(world, target=wcfg.cruise_speed), RULE_CRUISE)


def _waypoints_along_route(world: WorldState, distances: np.ndarray) -> tuple[tuple[float, float], ...]:
    ego_arc = world.ego_arc()
    out = []
    for d in distances:
        pt = world.route.point_at(ego_arc + float(d))
        out.append(to_ego_frame(pt, world.ego.position, world.ego.heading))
    return tuple(out)


def _classify(world: WorldState, action: Action) -> Action:
    from .observation import discretize_action

    hint = discretize_action(action, world.cfg)
    return Action(action.waypoints, action.accel, action.brake, hint)


def _stop_profile(world: WorldState, stop_distance: float) -> Action:
    """Constant-deceleration profile that halts at the constraint point."""
    wcfg = world.cfg
    v = world.ego.speed
    d = max(0.0, stop_distance)
    if v <= 0.0 or d <= 1e-9:
        decel = wcfg.a_max
    else:
        decel = min(wcfg.a_max, v * v / (2.0 * d))
    speeds = np.maximum(0.0, v - decel * wcfg.dt * np.arange(1, N_WAYPOINTS + 1))
    cum = np.minimum(np.cumsum(speeds * wcfg.dt), d)
    action = Action(_waypoints_along_route(world, cum), accel=-decel, brake=1)
    return _classify(world, action)


def _ramp_profile(world: WorldState, target: float) -> Action:
    """Accelerate or ease toward a target speed along the route."""
    wcfg = world.cfg
    v = world.ego.speed
    speeds = []
    cur = v
    for _ in range(N_WAYPOINTS):
        delta = float(np.clip(target - cur, -wcfg.a_max * wcfg.dt, wcfg.a_max * wcfg.dt))
        cur = max(0.0, cur + delta)
        speeds.append(cur)
    cum = np.cumsum(np.asarray(speeds) * wcfg.dt)
    accel = float(np.clip((target - v) / 1.0, -wcfg.a_max, wcfg.a_max))
    action = Action(_waypoints_along_route(world, cum), accel=accel, brake=0)
    return _classify(world, action)
