"""Configuration dataclasses plus the plain-text (key = value) config loader.

Every tunable constant in the pipeline lives here with a documented default.
A config file is an INI-style document whose sections map onto the dataclasses
below; unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass(frozen=True)
class WorldConfig:
    # integration
    dt: float = 0.1
    v_max: float = 10.0
    a_max: float = 4.0
    cruise_speed: float = 6.0
    # ego geometry / kinematic bicycle
    ego_length: float = 4.5
    ego_width: float = 2.0
    wheelbase: float = 2.8
    max_steer_rad: float = 0.6
    # rolling drag applied when coasting (keeps speed tracking honest)
    drag_c0: float = 0.1
    drag_c1: float = 0.05
    # road band around the route centerline
    road_half_width: float = 3.5
    barrier_margin: float = 1.5
    route_spacing: float = 1.0
    route_min: float = 150.0
    route_max: float = 250.0
    # traffic light cycle (GREEN -> YELLOW -> RED)
    green_s: float = 6.0
    yellow_s: float = 2.0
    red_s: float = 12.0
    # PID gains (lateral on heading error, longitudinal on speed error)
    lat_kp: float = 1.2
    lat_ki: float = 0.0
    lat_kd: float = 0.1
    lon_kp: float = 0.8
    lon_ki: float = 0.05
    lon_kd: float = 0.0
    integral_clamp: float = 1.0
    # sensor model
    detection_slots: int = 8
    detection_range: float = 50.0
    sensor_noise_sigma: float = 0.2
    light_visibility: float = 60.0
    light_cone_deg: float = 60.0
    route_context_n: int = 10
    route_context_spacing: float = 2.0
    sentinel_range: float = 200.0


@dataclass(frozen=True)
class ExpertConfig:
    corridor_lookahead: float = 15.0
    corridor_extra_width: float = 1.0
    light_margin: float = 5.0
    headway_s: float = 2.0
    close_gap: float = 8.0
    lead_stop_speed: float = 0.5
    ped_standoff: float = 4.0
    lead_standoff: float = 6.0


@dataclass(frozen=True)
class TreesConfig:
    n_rounds: int = 100
    max_depth: int = 4
    learning_rate: float = 0.1
    min_leaf: int = 5
    reg_lambda: float = 1.0
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class CFSearchConfig:
    lambda_init: float = 0.1
    lambda_growth: float = 2.0
    lambda_max: float = 1e4
    max_search_iters: int = 2000
    population: int = 40
    m_diverse: int = 4
    diversity_weight: float = 0.5
    delta_div: float = 0.3
    elite: int = 8
    mutation_prob: float = 0.4
    mutation_sigma: float = 0.3
    init_sigma: float = 0.5
    polish_rounds: int = 2
    bisect_iters: int = 30


@dataclass(frozen=True)
class AugmentConfig:
    target_cf_fraction: float = 0.122
    fraction_tolerance: float = 0.02
    m_diverse: int = 2
    sentinel_remove_range: float = 150.0
    offband_tolerance: float = 10.0


@dataclass(frozen=True)
class TrainConfig:
    lambda_pt: float = 0.4
    lambda_map: float = 0.4
    lambda_tf: float = 1.0
    hidden: tuple[int, ...] = (128, 128)
    grid_size: int = 5
    grid_extent: float = 25.0
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    bce_clamp: float = 1e-7


@dataclass(frozen=True)
class EvalConfig:
    max_steps: int = 900
    eval_seed_offset: int = 10_000
    routes: tuple[str, ...] = (
        "red_light",
        "red_light",
        "lead_vehicle",
        "lead_vehicle",
        "crossing_pedestrian",
        "crossing_pedestrian",
        "occluded_pedestrian",
        "occluded_pedestrian",
        "mixed",
        "mixed",
        "clear_road",
    )
    # multiplicative penalty per infraction kind
    pen_pedestrian_collision: float = 0.50
    pen_vehicle_collision: float = 0.60
    pen_layout_collision: float = 0.65
    pen_red_light_violation: float = 0.70
    pen_offroad: float = 0.80
    pen_route_timeout: float = 0.70


@dataclass(frozen=True)
class AblationConfig:
    templates: tuple[str, ...] = (
        "clear_road",
        "lead_vehicle",
        "red_light",
        "crossing_pedestrian",
        "occluded_pedestrian",
        "mixed",
    )
    episodes: int = 30
    episode_max_steps: int = 450


@dataclass(frozen=True)
class PipelineConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    trees: TreesConfig = field(default_factory=TreesConfig)
    cf: CFSearchConfig = field(default_factory=CFSearchConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def snapshot(self) -> dict[str, Any]:
        """Resolved config as a plain dict, suitable for run manifests."""
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            sub = getattr(self, f.name)
            out[f.name] = {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in dataclasses.asdict(sub).items()
            }
        return out


_SECTIONS = {
    "world": WorldConfig,
    "expert": ExpertConfig,
    "trees": TreesConfig,
    "cf": CFSearchConfig,
    "augment": AugmentConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "ablation": AblationConfig,
}


class ConfigError(ValueError):
    """Raised for unreadable config files, unknown sections or keys."""


def _parse_value(raw: str, annotation: Any, key: str) -> Any:
    raw = raw.strip()
    try:
        if annotation is float:
            return float(raw)
        if annotation is int:
            return int(raw)
        if annotation is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        if annotation is str:
            return raw
        # tuple fields: comma separated, element type inferred from default
        if str(annotation).startswith("tuple"):
            items = [p.strip() for p in raw.split(",") if p.strip()]
            if "int" in str(annotation):
                return tuple(int(p) for p in items)
            if "float" in str(annotation):
                return tuple(float(p) for p in items)
            return tuple(items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    raise ConfigError(f"unsupported config field type for {key!r}")


def load_config(path: str | Path | None) -> PipelineConfig:
    """Load a PipelineConfig from an INI-style file; None gives pure defaults."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    kwargs: dict[str, Any] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTIONS[section]
        field_types = {f.name: f.type for f in dataclasses.fields(cls)}
        # resolve stringified annotations from `from __future__ import annotations`
        resolved = {
            name: eval(t) if isinstance(t, str) else t  # noqa: S307 - trusted literals
            for name, t in field_types.items()
        }
        values: dict[str, Any] = {}
        for key, raw in parser.items(section):
            if key not in resolved:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[key] = _parse_value(raw, resolved[key], key)
        kwargs[section] = cls(**values)
    return PipelineConfig(**kwargs)
