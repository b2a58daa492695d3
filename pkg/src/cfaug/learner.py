"""Sensor-input imitation learner: a small feed-forward network predicting
waypoints, a coarse ego-centric auxiliary grid, and traffic flags, trained
with the weighted composite loss

    total = lambda_pt * L1(waypoints) + lambda_map * MSE(grid) + lambda_tf * BCE(flags)

All math is float64 numpy with analytic gradients (finite-difference checked
in the test suite). Training is plain SGD with momentum over a seeded,
deterministic batch stream.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .action import Action, N_WAYPOINTS, project_waypoints
from .config import TrainConfig, WorldConfig
from .geometry import to_ego_frame
from .world.types import LightPhase, SensorObs, WorldState


class EmptyDataset(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class DivergedLoss(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


_LIGHT_ORDER = ("RED", "YELLOW", "GREEN", "UNKNOWN")


def sensor_input_dim(world_cfg: WorldConfig) -> int:
    return 1 + world_cfg.detection_slots * 5 + 4 + world_cfg.route_context_n * 2


def flatten_sensor(obs: SensorObs, world_cfg: WorldConfig) -> np.ndarray:
    """SensorObs -> flat input vector (speed, detections, light one-hot, route)."""
    vals: list[float] = [obs.ego_speed]
    for det in obs.detections:
        vals.extend(det)
    onehot = [0.0, 0.0, 0.0, 0.0]
    onehot[_LIGHT_ORDER.index(obs.visible_light_phase)] = 1.0
    vals.extend(onehot)
    for pt in obs.route_context:
        vals.extend(pt)
    vec = np.asarray(vals, dtype=np.float64)
    if vec.shape[0] != sensor_input_dim(world_cfg):
        raise ShapeMismatch(f"sensor vector has length {vec.shape[0]}")
    return vec


def _input_scale(world_cfg: WorldConfig) -> np.ndarray:
    """Fixed normalization so raw meters/velocities land near unit scale."""
    scale = [1.0 / world_cfg.v_max]
    for _ in range(world_cfg.detection_slots):
        scale.extend(
            [
                1.0 / world_cfg.detection_range,
                1.0 / world_cfg.detection_range,
                1.0 / np.pi,
                1.0 / world_cfg.v_max,
                0.25,
            ]
        )
    scale.extend([1.0] * 4)
    scale.extend([1.0 / 20.0] * (world_cfg.route_context_n * 2))
    return np.asarray(scale, dtype=np.float64)


# ------------------------------------------------------------ aux targets


def aux_targets(world: WorldState, brake: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Supervision for the grid and flag heads, derived from the privileged world.

    Grid channel 0 marks cells (forward window, extent x extent meters) whose
    center contains an actor; channel 1 broadcasts 1 when a red light with a
    stop line ahead sits inside the window. Flags: red light ahead within
    sensor visibility, stop required (the expert brake bit), near a junction.
    """
    wcfg = world.cfg
    g = cfg.grid_size
    cell = cfg.grid_extent / g
    grid = np.zeros((g, g, 2))
    ego = world.ego
    for actor in world.actors:
        rel_x, rel_y = to_ego_frame(actor.position, ego.position, ego.heading)
        col = int(np.floor(rel_x / cell))
        row = int(np.floor((rel_y + cfg.grid_extent / 2.0) / cell))
        if 0 <= col < g and 0 <= row < g:
            grid[row, col, 0] = 1.0

    ego_arc = world.ego_arc()
    red_relevant = False
    red_visible = False
    near_junction = False
    for light in world.lights:
        line_arc, _ = world.route.project(light.stop_line)
        d = line_arc - ego_arc
        if abs(d) <= 15.0:
            near_junction = True
        if light.phase == LightPhase.RED and d > 0.0:
            if d <= cfg.grid_extent:
                red_relevant = True
            if d <= wcfg.light_visibility:
                red_visible = True
    if red_relevant:
        grid[:, :, 1] = 1.0

    flags = np.array([float(red_visible), float(brake), float(near_junction)])
    return grid.reshape(-1), flags


# ------------------------------------------------------------ model


@dataclass
class LearnerModel:
    params: dict[str, np.ndarray]
    train_cfg: TrainConfig
    world_cfg: WorldConfig
    loss_curve: list[tuple[float, float, float, float]] = field(default_factory=list)

    @property
    def grid_dim(self) -> int:
        return self.train_cfg.grid_size**2 * 2


def _head_dims(cfg: TrainConfig) -> tuple[int, int, int]:
    return 2 * N_WAYPOINTS, cfg.grid_size**2 * 2, 3


def init_model(train_cfg: TrainConfig, world_cfg: WorldConfig, seed: int) -> LearnerModel:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x4C4E)))
    dims = [sensor_input_dim(world_cfg), *train_cfg.hidden]
    params: dict[str, np.ndarray] = {}
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(dims[i], dims[i + 1]))
        params[f"b{i}"] = np.zeros(dims[i + 1])
    d_pt, d_map, d_tf = _head_dims(train_cfg)
    last = dims[-1]
    for name, width in (("pt", d_pt), ("map", d_map), ("tf", d_tf)):
        params[f"W_{name}"] = rng.normal(0.0, np.sqrt(1.0 / last), size=(last, width))
        params[f"b_{name}"] = np.zeros(width)
    return LearnerModel(params=params, train_cfg=train_cfg, world_cfg=world_cfg)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: LearnerModel, X: np.ndarray) -> dict[str, np.ndarray]:
    """Batch forward pass; X is raw (unnormalized) sensor vectors (B, D)."""
    p = model.params
    scale = _input_scale(model.world_cfg)
    h = X * scale[None, :]
    acts = {"x": h}
    i = 0
    while f"W{i}" in p:
        z = h @ p[f"W{i}"] + p[f"b{i}"]
        h = np.maximum(z, 0.0)
        acts[f"z{i}"], acts[f"h{i}"] = z, h
        i += 1
    acts["n_hidden"] = i
    acts["pt"] = h @ p["W_pt"] + p["b_pt"]
    acts["map"] = _sigmoid(h @ p["W_map"] + p["b_map"])
    acts["tf"] = _sigmoid(h @ p["W_tf"] + p["b_tf"])
    return acts


def loss_components(
    pred: dict[str, np.ndarray],
    targets: dict[str, np.ndarray],
    cfg: TrainConfig,
) -> tuple[float, float, float, float]:
    """(total, l_pt, l_map, l_tf) for a batch of predictions."""
    for key in ("pt", "map", "tf"):
        if pred[key].shape != targets[key].shape:
            raise ShapeMismatch(f"{key}: {pred[key].shape} vs {targets[key].shape}")
    l_pt = float(np.mean(np.abs(pred["pt"] - targets["pt"])))
    l_map = float(np.mean((pred["map"] - targets["map"]) ** 2))
    eps = cfg.bce_clamp
    p = np.clip(pred["tf"], eps, 1.0 - eps)
    t = targets["tf"]
    l_tf = float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))
    total = cfg.lambda_pt * l_pt + cfg.lambda_map * l_map + cfg.lambda_tf * l_tf
    return total, l_pt, l_map, l_tf


def loss_and_grads(
    model: LearnerModel, X: np.ndarray, targets: dict[str, np.ndarray]
) -> tuple[tuple[float, float, float, float], dict[str, np.ndarray]]:
    cfg = model.train_cfg
    p = model.params
    acts = forward(model, X)
    losses = loss_components(acts, targets, cfg)
    B = X.shape[0]
    d_pt, d_map, d_tf = _head_dims(cfg)

    grads: dict[str, np.ndarray] = {}
    h_last = acts[f"h{acts['n_hidden'] - 1}"] if acts["n_hidden"] else acts["x"]

    # waypoint head: L1
    g_pt = cfg.lambda_pt * np.sign(acts["pt"] - targets["pt"]) / (B * d_pt)
    # map head: MSE through sigmoid
    pm = acts["map"]
    g_map = cfg.lambda_map * 2.0 * (pm - targets["map"]) / (B * d_map) * pm * (1.0 - pm)
    # flag head: BCE through sigmoid; clamped activations carry no gradient
    eps = cfg.bce_clamp
    pt_ = acts["tf"]
    live = (pt_ > eps) & (pt_ < 1.0 - eps)
    g_tf = cfg.lambda_tf * (pt_ - targets["tf"]) / (B * d_tf) * live

    grads["W_pt"] = h_last.T @ g_pt
    grads["b_pt"] = g_pt.sum(axis=0)
    grads["W_map"] = h_last.T @ g_map
    grads["b_map"] = g_map.sum(axis=0)
    grads["W_tf"] = h_last.T @ g_tf
    grads["b_tf"] = g_tf.sum(axis=0)

    g_h = g_pt @ p["W_pt"].T + g_map @ p["W_map"].T + g_tf @ p["W_tf"].T
    for i in range(acts["n_hidden"] - 1, -1, -1):
        g_z = g_h * (acts[f"z{i}"] > 0.0)
        h_prev = acts[f"h{i - 1}"] if i > 0 else acts["x"]
        grads[f"W{i}"] = h_prev.T @ g_z
        grads[f"b{i}"] = g_z.sum(axis=0)
        g_h = g_z @ p[f"W{i}"].T
    return losses, grads


# ------------------------------------------------------------ training


def _dataset_arrays(records, world_cfg: WorldConfig, cfg: TrainConfig):
    X, Ypt, Ymap, Ytf = [], [], [], []
    for rec in records:
        X.append(flatten_sensor(rec.sensor_obs_typed(world_cfg), world_cfg))
        Ypt.append(np.asarray(rec.action_waypoints(), dtype=np.float64).reshape(-1))
        Ymap.append(np.asarray(rec.map_target, dtype=np.float64))
        Ytf.append(np.asarray(rec.flag_target, dtype=np.float64))
    return (
        np.asarray(X),
        {"pt": np.asarray(Ypt), "map": np.asarray(Ymap), "tf": np.asarray(Ytf)},
    )


def train(dataset, cfg: TrainConfig, world_cfg: WorldConfig | None = None, seed: int = 0) -> LearnerModel:
    """Fit the learner on an augmented dataset (or plain record list).

    Deterministic for a given seed: init, batch shuffles, and updates all run
    on fixed streams. Raises DivergedLoss if any batch loss goes non-finite.
    """
    records = list(getattr(dataset, "records", dataset))
    if not records:
        raise EmptyDataset("no training records")
    world_cfg = world_cfg or WorldConfig()
    X, targets = _dataset_arrays(records, world_cfg, cfg)
    model = init_model(cfg, world_cfg, seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((seed, 0x53484C)))

    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_targets = {k: v[idx] for k, v in targets.items()}
            losses, grads = loss_and_grads(model, X[idx], batch_targets)
            if not np.isfinite(losses[0]):
                raise DivergedLoss(epoch)
            for k, gradient in grads.items():
                velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * gradient
                model.params[k] += velocity[k]
            sums += np.asarray(losses)
            n_batches += 1
        model.loss_curve.append(tuple(sums / max(n_batches, 1)))
    return model


# ------------------------------------------------------------ inference


def learner_act(model: LearnerModel, obs: SensorObs) -> Action:
    """Map one sensor observation to a feasible Action.

    The brake bit comes from the stop-required flag at the 0.5 threshold, the
    accel command from the terminal waypoint spacing versus current speed, and
    the waypoints are projected onto the spacing envelope (brake actions are
    forced non-increasing).
    """
    wcfg = model.world_cfg
    x = flatten_sensor(obs, wcfg)[None, :]
    acts = forward(model, x)
    raw = acts["pt"][0].reshape(N_WAYPOINTS, 2)
    brake = 1 if acts["tf"][0, 1] > 0.5 else 0
    waypoints = project_waypoints(raw, wcfg.v_max, wcfg.dt, decelerating=bool(brake))
    pts = np.asarray(waypoints)
    prev = np.vstack([[0.0, 0.0], pts[:-1]])
    spacing = np.hypot(*(pts - prev).T)
    v_end = float(spacing[-1]) / wcfg.dt
    accel = float(np.clip(v_end - obs.ego_speed, -wcfg.a_max, wcfg.a_max))
    if brake:
        accel = -abs(accel) if accel != 0.0 else -wcfg.a_max
    return Action(waypoints=waypoints, accel=accel, brake=brake)


# ------------------------------------------------------------ persistence


def save(model: LearnerModel, path: str | Path) -> None:
    import dataclasses

    doc = {
        "version": 1,
        "kind": "imitation-mlp",
        "train_cfg": dataclasses.asdict(model.train_cfg),
        "world_cfg": dataclasses.asdict(model.world_cfg),
        "loss_curve": [list(row) for row in model.loss_curve],
        "params": {k: v.tolist() for k, v in model.params.items()},
    }
    doc["train_cfg"]["hidden"] = list(doc["train_cfg"]["hidden"])
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load(path: str | Path) -> LearnerModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "imitation-mlp":
        raise ValueError(f"not a learner checkpoint: {path}")
    tc = dict(doc["train_cfg"])
    tc["hidden"] = tuple(tc["hidden"])
    train_cfg = TrainConfig(**tc)
    world_cfg = WorldConfig(**doc["world_cfg"])
    params = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
    return LearnerModel(
        params=params,
        train_cfg=train_cfg,
        world_cfg=world_cfg,
        loss_curve=[tuple(r) for r in doc["loss_curve"]],
    )
