"""Demonstration collection, counterfactual scene realization, expert
relabeling, and assembly of the augmented dataset."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .action import Action, ActionClass
from .cfsearch import CFConfig, CFExample, CFNotFound, InvalidTarget, generate_diverse_cfs
from .config import PipelineConfig
from .expert import expert_decision
from .geometry import from_ego_frame, normalize_angle
from .learner import aux_targets
from .observation import FilteredObs, filter_observation, filter_observation_with_refs
from .trees import TreeModel, predict_class
from .world import PidController, render_sensors, sensor_rng, spawn_scenario, step
from .world.types import (
    Actor,
    ActorKind,
    Behavior,
    EgoState,
    LightPhase,
    SensorObs,
    TrafficLight,
    WorldState,
)


class Implausible(ValueError):
    """A counterfactual scene cannot be realized as a physical world state."""


@dataclass(frozen=True)
class DemoRecord:
    """One dataset row: sensor view, filtered view, expert action, metadata."""

    sensor_obs: dict
    filtered_obs: tuple[float, ...]
    action: dict
    action_class: int
    scenario_id: int
    template: str
    seed: int
    time_step: int
    rule_index: int
    map_target: tuple[float, ...]
    flag_target: tuple[float, ...]
    is_cf: bool = False
    cf_meta: dict | None = None

    def __post_init__(self):
        if self.is_cf and self.cf_meta is None:
            raise ValueError("counterfactual records require cf_meta")

    def sensor_obs_typed(self, world_cfg) -> SensorObs:
        so = self.sensor_obs
        return SensorObs(
            ego_speed=float(so["ego_speed"]),
            detections=tuple(tuple(d) for d in so["detections"]),
            visible_light_phase=str(so["visible_light_phase"]),
            route_context=tuple(tuple(p) for p in so["route_context"]),
        )

    def action_typed(self) -> Action:
        a = self.action
        return Action(
            waypoints=tuple(tuple(w) for w in a["waypoints"]),
            accel=float(a["accel"]),
            brake=int(a["brake"]),
            class_hint=ActionClass(int(a["class_hint"])),
        )

    def action_waypoints(self) -> list[list[float]]:
        return self.action["waypoints"]

    @property
    def features(self) -> tuple[float, ...]:
        return self.filtered_obs

    @property
    def label(self) -> int:
        return self.action_class


@dataclass(frozen=True)
class AugmentedDataset:
    records: tuple[DemoRecord, ...]
    n_original: int
    n_cf: int
    schema_version: int = 1
    cf_shortfall: int = 0

    def __post_init__(self):
        flagged = sum(1 for r in self.records if r.is_cf)
        if flagged != self.n_cf or len(self.records) != self.n_original + self.n_cf:
            raise ValueError("dataset counts do not match record flags")


def _sensor_to_dict(obs: SensorObs) -> dict:
    return {
        "ego_speed": obs.ego_speed,
        "detections": [list(d) for d in obs.detections],
        "visible_light_phase": obs.visible_light_phase,
        "route_context": [list(p) for p in obs.route_context],
    }


def _action_to_dict(action: Action) -> dict:
    return {
        "waypoints": [list(w) for w in action.waypoints],
        "accel": action.accel,
        "brake": action.brake,
        "class_hint": int(action.class_hint) if action.class_hint is not None else None,
    }


def make_record(
    world: WorldState,
    action: Action,
    rule_index: int,
    template: str,
    cfg: PipelineConfig,
    is_cf: bool = False,
    cf_meta: dict | None = None,
) -> DemoRecord:
    sensors = render_sensors(world, cfg.world)
    obs = filter_observation(world)
    grid, flags = aux_targets(world, action.brake, cfg.train)
    return DemoRecord(
        sensor_obs=_sensor_to_dict(sensors),
        filtered_obs=tuple(obs.flatten().tolist()),
        action=_action_to_dict(action),
        action_class=int(action.class_hint),
        scenario_id=world.scenario_id,
        template=template,
        seed=world.seed,
        time_step=world.time_step,
        rule_index=rule_index,
        map_target=tuple(grid.tolist()),
        flag_target=tuple(flags.tolist()),
        is_cf=is_cf,
        cf_meta=cf_meta,
    )


def episode_seed(base_seed: int, episode_index: int) -> int:
    return base_seed * 1000 + episode_index


def rollout_expert(
    template: str,
    seed: int,
    cfg: PipelineConfig,
    max_steps: int,
    keep_worlds: bool = False,
) -> tuple[list[DemoRecord], dict[int, WorldState]]:
    """Drive one episode under the expert, recording one row per step.

    Terminates at route completion or after max_steps. When keep_worlds is
    set, the per-step world snapshots are returned keyed by time_step (used
    for counterfactual scene realization).
    """
    world = spawn_scenario(template, seed, cfg.world)
    pid = PidController()
    records: list[DemoRecord] = []
    worlds: dict[int, WorldState] = {}
    for _ in range(max_steps):
        decision = expert_decision(world, cfg.expert)
        if keep_worlds:
            worlds[world.time_step] = world
        records.append(make_record(world, decision.action, decision.rule_index, template, cfg))
        control = pid.control(world, decision.action)
        world, _events = step(world, control)
        if world.route_length - world.ego_arc() <= 0.5:
            break
    return records, worlds


def collect_demonstrations(
    templates: Iterable[str],
    n_episodes: int,
    seed: int,
    cfg: PipelineConfig | None = None,
    max_steps: int | None = None,
) -> list[DemoRecord]:
    """Expert rollouts across cycled templates; deterministic for a given seed."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    cfg = cfg or PipelineConfig()
    max_steps = max_steps or cfg.ablation.episode_max_steps
    templates = list(templates)
    out: list[DemoRecord] = []
    for e in range(n_episodes):
        template = templates[e % len(templates)]
        records, _ = rollout_expert(template, episode_seed(seed, e), cfg, max_steps)
        out.extend(records)
    return out


# ------------------------------------------------------------ realization


def realize_scene(
    world: WorldState, o_prime: FilteredObs, cfg: PipelineConfig | None = None
) -> WorldState:
    """Write a counterfactual filtered observation back into the world.

    Only the entities holding the four observation slots (and the ego speed)
    are touched; slots whose values are unchanged keep their original objects
    so an identity observation round-trips bit-exactly. Raises Implausible for
    overlapping footprints or positions far off the drivable band.
    """
    cfg = cfg or PipelineConfig()
    current, refs = filter_observation_with_refs(world)
    ego = world.ego

    new_ego = ego
    if o_prime.ego_speed != current.ego_speed:
        new_ego = EgoState(ego.position, ego.heading, max(0.0, float(o_prime.ego_speed)))

    actors = {a.id: a for a in world.actors}
    lights = {li.id: li for li in world.lights}
    removed: set[int] = set()
    touched: list[int] = []
    next_id = max([a.id for a in world.actors], default=0) + 1

    for slot, cur_slot, ref in zip(o_prime.slots, current.slots, refs):
        if tuple(slot) == tuple(cur_slot):
            continue
        rel_x, rel_y, rel_h, speed, kind, phase = slot
        position = from_ego_frame((rel_x, rel_y), ego.position, ego.heading)
        if ref is None:
            if kind == int(ActorKind.NONE):
                continue  # sentinel tweaks with no entity behind them are ignored
            actor = Actor(
                next_id,
                ActorKind(int(kind)),
                position,
                normalize_angle(ego.heading + rel_h),
                max(0.0, float(speed)),
                behavior=Behavior.STATIC,
            )
            actors[actor.id] = actor
            touched.append(actor.id)
            next_id += 1
            continue
        ref_type, ref_id = ref
        if ref_type == "light":
            old = lights[ref_id]
            new_phase = LightPhase(int(phase)) if int(phase) in (1, 2, 3) else old.phase
            lights[ref_id] = TrafficLight(ref_id, position, new_phase, 0.0)
        else:
            if float(np.hypot(rel_x, rel_y)) >= cfg.augment.sentinel_remove_range:
                removed.add(ref_id)
                continue
            old = actors[ref_id]
            actors[ref_id] = Actor(
                ref_id,
                old.kind,
                position,
                normalize_angle(ego.heading + rel_h),
                max(0.0, float(speed)),
                old.behavior,
                old.script,
            )
            touched.append(ref_id)

    final_actors = tuple(a for a in (actors[i] for i in sorted(actors)) if a.id not in removed)
    new_world = WorldState(
        time_step=world.time_step,
        ego=new_ego,
        actors=final_actors,
        lights=tuple(lights[i] for i in sorted(lights)),
        route=world.route,
        route_length=world.route_length,
        scenario_id=world.scenario_id,
        seed=world.seed,
        cfg=world.cfg,
    )
    _check_plausible(new_world, touched, cfg)
    return new_world


def _check_plausible(world: WorldState, touched: list[int], cfg: PipelineConfig) -> None:
    from .geometry import rects_overlap

    by_id = {a.id: a for a in world.actors}
    ego_rect = world.ego_rect()
    for aid in touched:
        if aid not in by_id:
            continue
        actor = by_id[aid]
        rect = actor.rect()
        if rects_overlap(rect, ego_rect):
            raise Implausible(f"actor {aid} overlaps the ego footprint")
        for other in world.actors:
            if other.id != aid and rects_overlap(rect, other.rect()):
                raise Implausible(f"actor {aid} overlaps actor {other.id}")
        _, lateral = world.route.project(actor.position)
        if abs(lateral) > cfg.augment.offband_tolerance:
            raise Implausible(f"actor {aid} is {abs(lateral):.1f} m off the drivable band")
    for light in world.lights:
        _, lateral = world.route.project(light.stop_line)
        if abs(lateral) > cfg.augment.offband_tolerance:
            raise Implausible("stop line moved off the drivable band")


def relabel_and_record(
    world_prime: WorldState,
    cf: CFExample,
    cfg: PipelineConfig | None = None,
    rng: np.random.Generator | None = None,
) -> DemoRecord:
    """Expert relabeling of a realized counterfactual scene.

    The expert action always wins; agreement with the counterfactual target
    class is recorded as a health signal, not enforced.
    """
    cfg = cfg or PipelineConfig()
    template = ""
    decision = expert_decision(world_prime, cfg.expert)
    expert_class = decision.action.class_hint
    meta = {
        "distance": cf.distance,
        "lambda_final": cf.lambda_final,
        "target_class": int(cf.target_class),
        "original_class": int(cf.original_class),
        "expert_agreed": bool(int(expert_class) == int(cf.target_class)),
    }
    sensors = render_sensors(world_prime, cfg.world, rng or sensor_rng(world_prime.seed, world_prime.time_step))
    grid, flags = aux_targets(world_prime, decision.action.brake, cfg.train)
    return DemoRecord(
        sensor_obs=_sensor_to_dict(sensors),
        filtered_obs=tuple(cf.cf.flatten().tolist()),
        action=_action_to_dict(decision.action),
        action_class=int(expert_class),
        scenario_id=world_prime.scenario_id,
        template=template,
        seed=world_prime.seed,
        time_step=world_prime.time_step,
        rule_index=decision.rule_index,
        map_target=tuple(grid.tolist()),
        flag_target=tuple(flags.tolist()),
        is_cf=True,
        cf_meta=meta,
    )


# ------------------------------------------------------------ dataset build


def build_dataset(
    demos: list[DemoRecord],
    cf_provider: Callable[[DemoRecord, int], list[DemoRecord]],
    target_cf_fraction: float,
    seed: int,
) -> AugmentedDataset:
    """Assemble originals plus counterfactuals at the requested mix.

    Seeds are drawn uniformly (seeded permutation) from the originals until
    the counterfactual count reaches target. If providers cannot supply
    enough, the dataset is returned partial with the shortfall recorded.
    """
    if not 0.0 <= target_cf_fraction <= 0.5:
        raise ValueError("target_cf_fraction must be within [0, 0.5]")
    n = len(demos)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB11D)))
    needed = int(round(target_cf_fraction * n / (1.0 - target_cf_fraction)))
    cf_records: list[DemoRecord] = []
    if needed > 0:
        for idx in rng.permutation(n):
            if len(cf_records) >= needed:
                break
            produced = cf_provider(demos[int(idx)], int(idx))
            room = needed - len(cf_records)
            cf_records.extend(produced[:room])
    shortfall = max(0, needed - len(cf_records))
    combined: list[DemoRecord] = list(demos) + cf_records
    order = rng.permutation(len(combined))
    records = tuple(combined[int(i)] for i in order)
    return AugmentedDataset(
        records=records,
        n_original=n,
        n_cf=len(cf_records),
        cf_shortfall=shortfall,
    )


@dataclass
class AugmentStats:
    attempts: int = 0
    generated: int = 0
    not_found: int = 0
    implausible: int = 0
    invalid_target: int = 0
    expert_agreed: int = 0

    def agreement_rate(self) -> float:
        return self.expert_agreed / self.generated if self.generated else 0.0

    def success_rate(self) -> float:
        return self.generated / self.attempts if self.attempts else 0.0


class ScenePool:
    """Replays (template, seed) episodes on demand and caches the snapshots."""

    def __init__(self, cfg: PipelineConfig, max_steps: int):
        self.cfg = cfg
        self.max_steps = max_steps
        self._cache: dict[tuple[str, int], dict[int, WorldState]] = {}

    def world_for(self, record: DemoRecord) -> WorldState:
        key = (record.template, record.seed)
        if key not in self._cache:
            _, worlds = rollout_expert(
                record.template, record.seed, self.cfg, self.max_steps, keep_worlds=True
            )
            self._cache[key] = worlds
        return self._cache[key][record.time_step]


def make_cf_provider(
    model: TreeModel,
    cf_cfg: CFConfig,
    pipe_cfg: PipelineConfig,
    pool: ScenePool,
    dataset_seed: int,
    stats: AugmentStats,
) -> Callable[[DemoRecord, int], list[DemoRecord]]:
    """Provider that searches, realizes, and relabels counterfactuals for one record."""

    def provider(record: DemoRecord, index: int) -> list[DemoRecord]:
        world = pool.world_for(record)
        obs = FilteredObs.from_flat(np.asarray(record.filtered_obs))
        predicted = predict_class(model, obs)
        out: list[DemoRecord] = []
        for target in (ActionClass.GO, ActionClass.SLOW, ActionClass.STOP):
            if target == predicted:
                continue
            rng = np.random.default_rng(
                np.random.SeedSequence((dataset_seed, index, int(target)))
            )
            stats.attempts += 1
            try:
                examples = generate_diverse_cfs(model, obs, target, cf_cfg, rng)
            except InvalidTarget:
                stats.invalid_target += 1
                continue
            if not examples:
                stats.not_found += 1
                continue
            for ex in examples:
                try:
                    world_prime = realize_scene(world, ex.cf, pipe_cfg)
                except Implausible:
                    stats.implausible += 1
                    continue
                rec = relabel_and_record(world_prime, ex, pipe_cfg)
                rec = replace(rec, template=record.template)
                stats.generated += 1
                if rec.cf_meta and rec.cf_meta["expert_agreed"]:
                    stats.expert_agreed += 1
                out.append(rec)
        return out

    return provider


def augment_dataset(
    demos: list[DemoRecord],
    model: TreeModel,
    pipe_cfg: PipelineConfig,
    seed: int,
    target_fraction: float | None = None,
) -> tuple[AugmentedDataset, AugmentStats]:
    """Full augmentation pass: scales from the pool, per-record CF searches,
    scene realization, expert relabeling, deterministic assembly."""
    fraction = (
        pipe_cfg.augment.target_cf_fraction if target_fraction is None else target_fraction
    )
    stats = AugmentStats()
    if fraction <= 0.0 or not demos:
        ds = build_dataset(demos, lambda r, i: [], 0.0, seed)
        return ds, stats
    X = np.asarray([r.filtered_obs for r in demos], dtype=np.float64)
    cf_cfg = CFConfig.from_observations(
        X, pipe_cfg.world, pipe_cfg.cf, m_diverse=pipe_cfg.augment.m_diverse
    )
    pool = ScenePool(pipe_cfg, pipe_cfg.ablation.episode_max_steps)
    provider = make_cf_provider(model, cf_cfg, pipe_cfg, pool, seed, stats)
    ds = build_dataset(demos, provider, fraction, seed)
    return ds, stats
