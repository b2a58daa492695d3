"""Closed-loop evaluation: per-route episodes, leaderboard-style scoring,
and the matched-size ablation protocol."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .action import Action
from .augment import DemoRecord, augment_dataset, collect_demonstrations
from .config import EvalConfig, PipelineConfig
from .expert import expert_act
from .learner import LearnerModel, learner_act, train
from .observation import N_FEATURES
from .trees import TreesConfig, fit as fit_trees
from .world import PidController, render_sensors, sensor_rng, spawn_scenario, step
from .world.types import InfractionEvent, InfractionKind, WorldState


class EmptyResults(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeResult:
    route_completion: float  # percent, [0, 100]
    infractions: tuple[InfractionEvent, ...]
    steps_used: int
    timeout_steps: int
    scenario_id: int
    seed: int


@dataclass(frozen=True)
class PenaltyTable:
    coefficients: dict[InfractionKind, float]

    def __post_init__(self):
        for kind, c in self.coefficients.items():
            if not 0.0 < c <= 1.0:
                raise ValueError(f"penalty for {kind} must be in (0, 1], got {c}")

    @staticmethod
    def from_config(cfg: EvalConfig) -> "PenaltyTable":
        return PenaltyTable(
            {
                InfractionKind.PEDESTRIAN_COLLISION: cfg.pen_pedestrian_collision,
                InfractionKind.VEHICLE_COLLISION: cfg.pen_vehicle_collision,
                InfractionKind.LAYOUT_COLLISION: cfg.pen_layout_collision,
                InfractionKind.RED_LIGHT_VIOLATION: cfg.pen_red_light_violation,
                InfractionKind.OFFROAD: cfg.pen_offroad,
                InfractionKind.ROUTE_TIMEOUT: cfg.pen_route_timeout,
            }
        )


@dataclass(frozen=True)
class EvalReport:
    episodes: tuple[EpisodeResult, ...]
    driving_score: float
    route_completion_mean: float
    infraction_score_mean: float
    per_kind_rates: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "driving_score": self.driving_score,
            "route_completion_mean": self.route_completion_mean,
            "infraction_score_mean": self.infraction_score_mean,
            "per_kind_rates": self.per_kind_rates,
            "episodes": [
                {
                    "route_completion": e.route_completion,
                    "steps_used": e.steps_used,
                    "timeout_steps": e.timeout_steps,
                    "scenario_id": e.scenario_id,
                    "seed": e.seed,
                    "infractions": [
                        {"kind": ev.kind.value, "time_step": ev.time_step, "actor_id": ev.actor_id}
                        for ev in e.infractions
                    ],
                }
                for e in self.episodes
            ],
        }


# ------------------------------------------------------------ policies


class ExpertPolicy:
    """Privileged rule-based driver."""

    name = "expert"

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg

    def reset(self) -> None:
        pass

    def act(self, world: WorldState) -> Action:
        return expert_act(world, self.cfg.expert)


class LearnerPolicy:
    """Sensor-driven imitation model; sees only rendered observations."""

    name = "learner"

    def __init__(self, model: LearnerModel, cfg: PipelineConfig):
        self.model = model
        self.cfg = cfg

    def reset(self) -> None:
        pass

    def act(self, world: WorldState) -> Action:
        obs = render_sensors(world, self.cfg.world, sensor_rng(world.seed, world.time_step))
        return learner_act(self.model, obs)


_COLLISIONS = (
    InfractionKind.PEDESTRIAN_COLLISION,
    InfractionKind.VEHICLE_COLLISION,
    InfractionKind.LAYOUT_COLLISION,
)


def run_episode(
    policy,
    template: str,
    seed: int,
    max_steps: int,
    cfg: PipelineConfig | None = None,
    trace_path: str | Path | None = None,
) -> EpisodeResult:
    """Closed loop observe -> act -> PID -> step until the route ends, the step
    budget runs out (ROUTE_TIMEOUT), or a collision terminates the episode."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    cfg = cfg or PipelineConfig()
    world = spawn_scenario(template, seed, cfg.world)
    pid = PidController()
    policy.reset()
    events: list[InfractionEvent] = []
    progress = world.ego_arc()
    trace_lines: list[str] = []
    completed = False

    steps = 0
    for _ in range(max_steps):
        action = policy.act(world)
        control = pid.control(world, action)
        world, new_events = step(world, control)
        steps += 1
        events.extend(new_events)
        progress = max(progress, world.ego_arc())
        if trace_path is not None:
            trace_lines.append(_trace_line(world, control, new_events))
        if any(ev.kind in _COLLISIONS for ev in new_events):
            break
        if world.route_length - progress <= 0.5:
            completed = True
            break
    else:
        events.append(InfractionEvent(InfractionKind.ROUTE_TIMEOUT, world.time_step))

    completion = 100.0 if completed else float(np.clip(100.0 * progress / world.route_length, 0.0, 100.0))
    if trace_path is not None:
        Path(trace_path).write_text("".join(trace_lines), encoding="utf-8")
    return EpisodeResult(
        route_completion=completion,
        infractions=tuple(events),
        steps_used=steps,
        timeout_steps=max_steps,
        scenario_id=world.scenario_id,
        seed=seed,
    )


def _trace_line(world: WorldState, control, events) -> str:
    rec = {
        "time_step": world.time_step,
        "ego": {
            "position": list(world.ego.position),
            "heading": world.ego.heading,
            "speed": world.ego.speed,
        },
        "actors": [
            {
                "id": a.id,
                "kind": a.kind.name,
                "position": list(a.position),
                "heading": a.heading,
                "speed": a.speed,
                "behavior": a.behavior.name,
            }
            for a in world.actors
        ],
        "lights": [
            {
                "id": li.id,
                "stop_line": list(li.stop_line),
                "phase": li.phase.name,
                "phase_timer": li.phase_timer,
            }
            for li in world.lights
        ],
        "control": {"steer": control.steer, "throttle": control.throttle, "brake": control.brake},
        "events": [{"kind": ev.kind.value, "actor_id": ev.actor_id} for ev in events],
    }
    return json.dumps(rec, separators=(",", ":")) + "\n"


# ------------------------------------------------------------ scoring


def infraction_score(result: EpisodeResult, penalties: PenaltyTable) -> float:
    """Product of per-event penalty coefficients; ROUTE_TIMEOUT applies once."""
    score = 1.0
    timeout_applied = False
    for ev in result.infractions:
        if ev.kind == InfractionKind.ROUTE_TIMEOUT:
            if timeout_applied:
                continue
            timeout_applied = True
        score *= penalties.coefficients[ev.kind]
    return score


def driving_score(results, penalties: PenaltyTable) -> EvalReport:
    """Mean over routes of completion x infraction product, plus aggregates."""
    results = tuple(results)
    if not results:
        raise EmptyResults("no episode results to score")
    per_route = [r.route_completion * infraction_score(r, penalties) for r in results]
    rates = {kind.value: 0.0 for kind in InfractionKind}
    for r in results:
        for ev in r.infractions:
            rates[ev.kind.value] += 1.0
    n = len(results)
    rates = {k: v / n for k, v in rates.items()}
    return EvalReport(
        episodes=results,
        driving_score=float(np.mean(per_route)),
        route_completion_mean=float(np.mean([r.route_completion for r in results])),
        infraction_score_mean=float(np.mean([infraction_score(r, penalties) for r in results])),
        per_kind_rates=rates,
    )


def evaluate_policy(policy, cfg: PipelineConfig, seed: int) -> EvalReport:
    """Run the configured route suite under held-out (offset) seeds."""
    penalties = PenaltyTable.from_config(cfg.eval)
    results = []
    for i, template in enumerate(cfg.eval.routes):
        ep_seed = seed + cfg.eval.eval_seed_offset + i
        results.append(run_episode(policy, template, ep_seed, cfg.eval.max_steps, cfg))
    return driving_score(results, penalties)


# ------------------------------------------------------------ ablation


@dataclass
class AblationArm:
    name: str
    n_original: int
    n_cf: int
    report: EvalReport


@dataclass
class AblationResult:
    arms: list[AblationArm]
    seed: int
    tree_agreement: float
    cf_stats: dict
    gap_cf_vs_matched: float = field(init=False)

    def __post_init__(self):
        scores = {arm.name: arm.report.driving_score for arm in self.arms}
        self.gap_cf_vs_matched = scores.get("cf-augmented", 0.0) - scores.get(
            "matched-no-cf", 0.0
        )


def _tree_agreement(model, records: list[DemoRecord]) -> float:
    from .trees import predict_class_batch

    X = np.asarray([r.filtered_obs for r in records], dtype=np.float64)
    y = np.asarray([r.action_class for r in records])
    return float(np.mean(predict_class_batch(model, X) == y))


def run_ablation(cfg: PipelineConfig, seed: int, trees_cfg: TreesConfig | None = None) -> AblationResult:
    """Three matched training arms plus the expert ceiling, one seed.

    Arms: original-only small (the counterfactual arm's originals), original-only
    size-matched, and counterfactual-augmented; arm totals are equalized exactly.
    """
    trees_cfg = trees_cfg or cfg.trees
    pool = collect_demonstrations(
        cfg.ablation.templates, cfg.ablation.episodes, seed, cfg,
        max_steps=cfg.ablation.episode_max_steps,
    )
    n_pool = len(pool)

    # distill the tree model from a split of the pool; rest measures agreement
    split = int(n_pool * (1.0 - trees_cfg.holdout_fraction))
    tree_model = fit_trees((np.asarray([r.filtered_obs for r in pool[:split]]),
                            np.asarray([r.action_class for r in pool[:split]])), trees_cfg)
    agreement = _tree_agreement(tree_model, pool[split:])

    # arm C originals: uniform subsample leaving room for the counterfactual share
    frac = cfg.augment.target_cf_fraction
    n_cf_target = int(round(frac * n_pool))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xAB1A)))
    keep = np.sort(rng.permutation(n_pool)[: n_pool - n_cf_target])
    originals_c = [pool[int(i)] for i in keep]

    dataset_c, stats = augment_dataset(originals_c, tree_model, cfg, seed)
    total_c = dataset_c.n_original + dataset_c.n_cf

    # arm B: original-only, truncated to exactly match arm C's total
    order = rng.permutation(n_pool)
    dataset_b = [pool[int(i)] for i in np.sort(order[:total_c])]
    dataset_a = originals_c

    arms: list[AblationArm] = []
    for name, records in (
        ("baseline-small", dataset_a),
        ("matched-no-cf", dataset_b),
        ("cf-augmented", list(dataset_c.records)),
    ):
        model = train(records, cfg.train, cfg.world, seed)
        report = evaluate_policy(LearnerPolicy(model, cfg), cfg, seed)
        n_cf = sum(1 for r in records if r.is_cf)
        arms.append(AblationArm(name, len(records) - n_cf, n_cf, report))

    expert_report = evaluate_policy(ExpertPolicy(cfg), cfg, seed)
    arms.append(AblationArm("expert", 0, 0, expert_report))

    return AblationResult(
        arms=arms,
        seed=seed,
        tree_agreement=agreement,
        cf_stats={
            "attempts": stats.attempts,
            "generated": stats.generated,
            "not_found": stats.not_found,
            "implausible": stats.implausible,
            "expert_agreement_rate": stats.agreement_rate(),
            "cf_shortfall": dataset_c.cf_shortfall,
        },
    )
