"""Range-limited, noisy sensor rendering with line-of-sight occlusion."""
from __future__ import annotations

import numpy as np

from ..config import WorldConfig
from ..geometry import normalize_angle, to_ego_frame
from .types import Actor, ActorKind, LightPhase, SensorObs, WorldState

_SENSOR_STREAM = 0x53454E53  # namespace tag for the per-step noise stream


def sensor_rng(seed: int, time_step: int) -> np.random.Generator:
    """Noise stream for one step, reproducible regardless of call order."""
    return np.random.default_rng(
        np.random.SeedSequence((_SENSOR_STREAM, seed & 0xFFFFFFFFFFFFFFFF, time_step))
    )


def _segment_hits_rect(p0, p1, rect) -> bool:
    """True if segment p0-p1 passes through the rectangle footprint."""
    corners = rect.corners()
    d = np.array([p1[0] - p0[0], p1[1] - p0[1]])
    # project corners and segment on the segment normal: all corners on one
    # side means no crossing; otherwise check overlap along the segment
    n = np.array([-d[1], d[0]])
    rel = corners - np.array(p0)
    sides = rel @ n
    if np.all(sides > 0) or np.all(sides < 0):
        return False
    t = rel @ d / float(d @ d)
    return bool(t.max() > 0.0 and t.min() < 1.0)


def _occluded(world: WorldState, target: Actor) -> bool:
    p0 = world.ego.position
    p1 = target.position
    for other in world.actors:
        if other.id == target.id or other.kind == ActorKind.PEDESTRIAN:
            continue
        if _segment_hits_rect(p0, p1, other.rect()):
            return True
    return False


def render_sensors(
    world: WorldState,
    noise_cfg: WorldConfig | None = None,
    rng: np.random.Generator | None = None,
) -> SensorObs:
    """Ego-frame detections with Gaussian position noise, plus light phase and
    upcoming route context.

    Detection slots are distance-ordered and padded with sentinel tuples.
    Lights are visible only within range and inside the forward cone; actors
    are dropped when another vehicle blocks the line of sight.
    """
    cfg = noise_cfg or world.cfg
    if rng is None:
        rng = sensor_rng(world.seed, world.time_step)

    ego = world.ego
    sigma = cfg.sensor_noise_sigma
    candidates: list[tuple[float, Actor]] = []
    for actor in world.actors:
        rel_x, rel_y = to_ego_frame(actor.position, ego.position, ego.heading)
        dist = float(np.hypot(rel_x, rel_y))
        if dist > cfg.detection_range:
            continue
        if _occluded(world, actor):
            continue
        candidates.append((dist, actor))
    candidates.sort(key=lambda item: (item[0], item[1].id))

    detections: list[tuple[float, float, float, float, int]] = []
    for dist, actor in candidates[: cfg.detection_slots]:
        rel_x, rel_y = to_ego_frame(actor.position, ego.position, ego.heading)
        nx = float(rng.normal(0.0, sigma)) if sigma > 0 else 0.0
        ny = float(rng.normal(0.0, sigma)) if sigma > 0 else 0.0
        rel_h = normalize_angle(actor.heading - ego.heading)
        detections.append((rel_x + nx, rel_y + ny, rel_h, actor.speed, int(actor.kind)))
    while len(detections) < cfg.detection_slots:
        detections.append((cfg.sentinel_range, 0.0, 0.0, 0.0, int(ActorKind.NONE)))

    phase = "UNKNOWN"
    best = cfg.light_visibility
    cone = np.deg2rad(cfg.light_cone_deg)
    for light in world.lights:
        rel_x, rel_y = to_ego_frame(light.stop_line, ego.position, ego.heading)
        dist = float(np.hypot(rel_x, rel_y))
        bearing = abs(float(np.arctan2(rel_y, rel_x)))
        if dist <= best and bearing <= cone:
            best = dist
            phase = LightPhase(light.phase).name

    ego_arc = world.ego_arc()
    context = []
    for k in range(1, cfg.route_context_n + 1):
        pt = world.route.point_at(ego_arc + k * cfg.route_context_spacing)
        context.append(to_ego_frame(pt, ego.position, ego.heading))

    return SensorObs(
        ego_speed=ego.speed,
        detections=tuple(detections),
        visible_light_phase=phase,
        route_context=tuple(context),
    )
