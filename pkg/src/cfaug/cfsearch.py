"""Counterfactual observation search against the tree classifier.

Trees are piecewise constant, so the search is population-based rather than
gradient-based: a seeded evolutionary loop minimizes

    lam * (p_target(x) - 1)^2 + dist(x0, x)

with lam escalating geometrically until the predicted class actually flips,
then the winning candidate is polished toward the original observation
(feature reverts, per-feature bisection, final segment bisection) so it lands
just past the decision boundary. Distances are MAD-standardized Euclidean.

Diverse generation repeats the search with an additive penalty
sum_j exp(-dist(x, cf_j)) over the counterfactuals already found.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .action import ActionClass
from .config import CFSearchConfig, WorldConfig
from .observation import (
    N_FEATURES,
    N_SLOTS,
    FilteredObs,
    frozen_indices,
    kind_code_index,
    phase_code_index,
    slot_feature_indices,
)
from .trees import TreeModel, predict_proba_batch
from .world.types import ActorKind


class InvalidTarget(ValueError):
    """Requested target class equals the model's current prediction."""


class CFNotFound(RuntimeError):
    """Search budget exhausted without a single class-flipping candidate."""


@dataclass(frozen=True)
class CFConfig:
    """Search hyperparameters plus the data-dependent feature geometry."""

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
    frozen_features: tuple[int, ...] = field(default_factory=frozen_indices)
    feature_scales: tuple[float, ...] = tuple([1.0] * N_FEATURES)
    feasible_ranges: tuple[tuple[float, float], ...] = ()
    integer_features: tuple[int, ...] = tuple(
        sorted(kind_code_index(k) for k in range(N_SLOTS))
        + sorted(phase_code_index(k) for k in range(N_SLOTS))
    )

    def __post_init__(self):
        if self.lambda_init <= 0:
            raise ValueError("lambda_init must be positive")
        if self.m_diverse < 1:
            raise ValueError("m_diverse must be at least 1")
        if any(s <= 0 for s in self.feature_scales):
            raise ValueError("feature scales must be positive")

    @staticmethod
    def from_observations(
        X: np.ndarray,
        world_cfg: WorldConfig | None = None,
        search: CFSearchConfig | None = None,
        m_diverse: int | None = None,
    ) -> "CFConfig":
        """Build a config from a matrix of collected observations.

        Scales are per-feature median absolute deviations (floored at 1e-6);
        feasible ranges come from the physical limits of each feature kind.
        """
        world_cfg = world_cfg or WorldConfig()
        search = search or CFSearchConfig()
        X = np.asarray(X, dtype=np.float64)
        med = np.median(X, axis=0)
        mad = np.median(np.abs(X - med[None, :]), axis=0)
        scales = tuple(float(max(s, 1e-6)) for s in mad)
        return CFConfig(
            lambda_init=search.lambda_init,
            lambda_growth=search.lambda_growth,
            lambda_max=search.lambda_max,
            max_search_iters=search.max_search_iters,
            population=search.population,
            m_diverse=m_diverse if m_diverse is not None else search.m_diverse,
            diversity_weight=search.diversity_weight,
            delta_div=search.delta_div,
            elite=search.elite,
            mutation_prob=search.mutation_prob,
            mutation_sigma=search.mutation_sigma,
            init_sigma=search.init_sigma,
            polish_rounds=search.polish_rounds,
            bisect_iters=search.bisect_iters,
            feature_scales=scales,
            feasible_ranges=default_feasible_ranges(world_cfg),
        )


def default_feasible_ranges(world_cfg: WorldConfig) -> tuple[tuple[float, float], ...]:
    r = world_cfg.sentinel_range
    ranges: list[tuple[float, float]] = [(0.0, world_cfg.v_max)]  # ego_speed
    for _ in range(N_SLOTS):
        ranges.extend(
            [
                (-r, r),  # rel_x
                (-r, r),  # rel_y
                (-np.pi, np.pi),  # rel_heading
                (0.0, world_cfg.v_max),  # speed
                (0.0, 4.0),  # kind code (frozen in practice)
                (0.0, 3.0),  # light phase code
            ]
        )
    return tuple(ranges)


@dataclass(frozen=True)
class CFExample:
    original: FilteredObs
    original_class: ActionClass
    cf: FilteredObs
    target_class: ActionClass
    distance: float
    lambda_final: float
    valid: bool


# ---------------------------------------------------------------- loss


def standardized_distance(a: np.ndarray, b: np.ndarray, scales) -> float:
    d = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) / np.asarray(scales)
    return float(np.sqrt(np.sum(d * d)))


def cf_loss(
    model: TreeModel,
    o_prime,
    o,
    target: ActionClass,
    lam: float,
    cfg: CFConfig,
) -> float:
    """Scalar search objective for a single candidate."""
    x = _vec(o_prime)
    x0 = _vec(o)
    p = predict_proba_batch(model, x[None, :])[0, int(target)]
    return float(lam * (p - 1.0) ** 2 + standardized_distance(x0, x, cfg.feature_scales))


def _vec(o) -> np.ndarray:
    if isinstance(o, FilteredObs):
        return o.flatten()
    return np.asarray(o, dtype=np.float64)


def _loss_batch(
    model: TreeModel,
    X: np.ndarray,
    x0: np.ndarray,
    target: int,
    lam: float,
    cfg: CFConfig,
    previous: list[np.ndarray],
) -> np.ndarray:
    scales = np.asarray(cfg.feature_scales)
    p = predict_proba_batch(model, X)[:, target]
    d = (X - x0[None, :]) / scales[None, :]
    dist = np.sqrt(np.sum(d * d, axis=1))
    obj = lam * (p - 1.0) ** 2 + dist
    if previous:
        for prev in previous:
            dp = (X - prev[None, :]) / scales[None, :]
            obj += cfg.diversity_weight * np.exp(-np.sqrt(np.sum(dp * dp, axis=1)))
    return obj


# ---------------------------------------------------------------- masks


def effective_frozen_mask(cfg: CFConfig, x0: np.ndarray) -> np.ndarray:
    """Static frozen indices plus instance-level locks.

    Sentinel slots are fully frozen (there is nothing to move), traffic-light
    slots freeze heading and speed (meaningless for a stop line), and the
    phase code is frozen wherever the slot is not a light, which preserves
    phase presence.
    """
    frozen = np.zeros(N_FEATURES, dtype=bool)
    frozen[list(cfg.frozen_features)] = True
    for k in range(N_SLOTS):
        kind = int(round(x0[kind_code_index(k)]))
        idx = slot_feature_indices(k)
        if kind == int(ActorKind.NONE):
            frozen[list(idx)] = True
        elif kind == int(ActorKind.TRAFFIC_LIGHT):
            frozen[idx[2]] = True  # rel_heading
            frozen[idx[3]] = True  # speed
        if kind != int(ActorKind.TRAFFIC_LIGHT):
            frozen[phase_code_index(k)] = True
    return frozen


def _phase_feature_set(cfg: CFConfig, x0: np.ndarray) -> dict[int, tuple[float, float]]:
    """Value bounds for live phase-code features ({1..3} when a light is present)."""
    bounds: dict[int, tuple[float, float]] = {}
    for k in range(N_SLOTS):
        kind = int(round(x0[kind_code_index(k)]))
        if kind == int(ActorKind.TRAFFIC_LIGHT):
            bounds[phase_code_index(k)] = (1.0, 3.0)
    return bounds


# ---------------------------------------------------------------- search


def generate_cf(
    model: TreeModel,
    o,
    target: ActionClass,
    cfg: CFConfig,
    rng: np.random.Generator,
) -> CFExample:
    """Single counterfactual via the lambda-scheduled evolutionary search."""
    return _search_one(model, o, target, cfg, rng, previous=[])


def generate_diverse_cfs(
    model: TreeModel,
    o,
    target: ActionClass,
    cfg: CFConfig,
    rng: np.random.Generator,
) -> list[CFExample]:
    """Up to m_diverse mutually distant counterfactuals for one observation.

    Later searches carry an exp(-distance) repulsion from every counterfactual
    already accepted; candidates that still land within delta_div of an earlier
    one are dropped, so the returned set is pairwise separated.
    """
    found: list[CFExample] = []
    prev_vecs: list[np.ndarray] = []
    scales = np.asarray(cfg.feature_scales)
    for _ in range(cfg.m_diverse):
        try:
            ex = _search_one(model, o, target, cfg, rng, previous=prev_vecs)
        except CFNotFound:
            continue
        vec = ex.cf.flatten()
        if any(
            standardized_distance(vec, pv, scales) < cfg.delta_div for pv in prev_vecs
        ):
            continue
        found.append(ex)
        prev_vecs.append(vec)
    return found


def _lambda_schedule(cfg: CFConfig) -> list[float]:
    lams = []
    lam = cfg.lambda_init
    while lam <= cfg.lambda_max:
        lams.append(lam)
        lam *= cfg.lambda_growth
    return lams or [cfg.lambda_init]


def _search_one(
    model: TreeModel,
    o,
    target: ActionClass,
    cfg: CFConfig,
    rng: np.random.Generator,
    previous: list[np.ndarray],
) -> CFExample:
    x0 = _vec(o)
    original_class = ActionClass(int(np.argmax(predict_proba_batch(model, x0[None, :])[0])))
    if original_class == target:
        raise InvalidTarget(f"target {target!r} equals the current prediction")

    frozen = effective_frozen_mask(cfg, x0)
    phase_bounds = _phase_feature_set(cfg, x0)
    lo, hi = _bounds(cfg, x0, phase_bounds)
    int_feats = np.array(
        [i for i in cfg.integer_features if not frozen[i]], dtype=np.int64
    )
    scales = np.asarray(cfg.feature_scales)

    pop = _init_population(x0, cfg, frozen, lo, hi, int_feats, rng)
    schedule = _lambda_schedule(cfg)
    iters_per_level = max(4, cfg.max_search_iters // len(schedule))

    tgt = int(target)
    best_valid: np.ndarray | None = None
    best_valid_dist = np.inf
    best_valid_lam = schedule[0]

    for lam in schedule:
        for _ in range(iters_per_level):
            obj = _loss_batch(model, pop, x0, tgt, lam, cfg, previous)
            pop = _next_generation(pop, obj, x0, cfg, frozen, lo, hi, int_feats, rng)
        obj = _loss_batch(model, pop, x0, tgt, lam, cfg, previous)
        classes = np.argmax(predict_proba_batch(model, pop), axis=1)
        valid_mask = classes == tgt
        if valid_mask.any():
            dists = np.array(
                [standardized_distance(pop[i], x0, scales) for i in np.nonzero(valid_mask)[0]]
            )
            i_local = int(np.argmin(dists))
            i_pop = int(np.nonzero(valid_mask)[0][i_local])
            if dists[i_local] < best_valid_dist:
                best_valid = pop[i_pop].copy()
                best_valid_dist = float(dists[i_local])
                best_valid_lam = lam
        i_best = int(np.argmin(obj))
        if valid_mask[i_best]:
            cand = _polish(model, x0, pop[i_best].copy(), tgt, cfg, frozen, int_feats)
            return _finish(model, o, x0, cand, original_class, target, lam, cfg)
    if best_valid is not None:
        cand = _polish(model, x0, best_valid, tgt, cfg, frozen, int_feats)
        return _finish(model, o, x0, cand, original_class, target, best_valid_lam, cfg)
    raise CFNotFound(
        f"no class-{int(target)} counterfactual within the search budget"
    )


def _bounds(cfg: CFConfig, x0: np.ndarray, phase_bounds) -> tuple[np.ndarray, np.ndarray]:
    ranges = cfg.feasible_ranges or default_feasible_ranges(WorldConfig())
    arr = np.asarray(ranges, dtype=np.float64)
    lo, hi = arr[:, 0].copy(), arr[:, 1].copy()
    for idx, (plo, phi) in phase_bounds.items():
        lo[idx], hi[idx] = plo, phi
    # never let bounds exclude the original point
    lo = np.minimum(lo, x0)
    hi = np.maximum(hi, x0)
    return lo, hi


def _init_population(x0, cfg, frozen, lo, hi, int_feats, rng) -> np.ndarray:
    scales = np.asarray(cfg.feature_scales)
    pop = np.tile(x0, (cfg.population, 1))
    half = cfg.population // 2
    noise = rng.normal(0.0, cfg.init_sigma, size=(half, N_FEATURES)) * scales[None, :]
    pop[:half] += noise
    uniform = lo[None, :] + rng.random((cfg.population - half, N_FEATURES)) * (hi - lo)[None, :]
    pop[half:] = uniform
    pop[:, frozen] = x0[frozen]
    return _repair(pop, x0, frozen, lo, hi, int_feats)


def _repair(pop, x0, frozen, lo, hi, int_feats) -> np.ndarray:
    pop = np.clip(pop, lo[None, :], hi[None, :])
    if int_feats.size:
        pop[:, int_feats] = np.round(pop[:, int_feats])
        pop = np.clip(pop, lo[None, :], hi[None, :])
    pop[:, frozen] = x0[frozen]
    return pop


def _next_generation(pop, obj, x0, cfg, frozen, lo, hi, int_feats, rng) -> np.ndarray:
    order = np.argsort(obj, kind="stable")
    elite = pop[order[: cfg.elite]]
    n_off = cfg.population - cfg.elite
    # tournament selection, three entrants per parent
    entrants = rng.integers(0, cfg.population, size=(n_off, 2, 3))
    winners = entrants[
        np.arange(n_off)[:, None],
        np.arange(2)[None, :],
        np.argmin(obj[entrants], axis=2),
    ]
    pa, pb = pop[winners[:, 0]], pop[winners[:, 1]]
    mix = rng.random((n_off, N_FEATURES)) < 0.5
    children = np.where(mix, pa, pb)
    mutate = rng.random((n_off, N_FEATURES)) < cfg.mutation_prob
    scales = np.asarray(cfg.feature_scales)
    children = children + mutate * rng.normal(0.0, cfg.mutation_sigma, children.shape) * scales
    # integer features explore by resampling within bounds
    if int_feats.size:
        flip = rng.random((n_off, int_feats.size)) < cfg.mutation_prob
        randint = np.floor(
            lo[int_feats][None, :]
            + rng.random((n_off, int_feats.size)) * (hi[int_feats] - lo[int_feats] + 1.0)[None, :]
        )
        children[:, int_feats] = np.where(flip, randint, children[:, int_feats])
    children = _repair(children, x0, frozen, lo, hi, int_feats)
    return np.vstack([elite, children])


# ---------------------------------------------------------------- polish


def _is_target(model, x, tgt) -> bool:
    return int(np.argmax(predict_proba_batch(model, x[None, :])[0])) == tgt


def _polish(model, x0, cand, tgt, cfg, frozen, int_feats) -> np.ndarray:
    scales = np.asarray(cfg.feature_scales)
    int_set = set(int(i) for i in int_feats)

    # 1) revert features wholesale where validity allows, cheapest first
    for _ in range(cfg.polish_rounds):
        deltas = np.abs(cand - x0) / scales
        for i in np.argsort(deltas, kind="stable"):
            if frozen[i] or cand[i] == x0[i]:
                continue
            trial = cand.copy()
            trial[i] = x0[i]
            if _is_target(model, trial, tgt):
                cand = trial
        # integer features: step toward the original value while still valid
        for i in sorted(int_set):
            while cand[i] != x0[i]:
                step = np.sign(x0[i] - cand[i])
                trial = cand.copy()
                trial[i] = cand[i] + step
                if _is_target(model, trial, tgt):
                    cand = trial
                else:
                    break

    # 2) per-feature bisection toward the original for the remaining changes
    for i in np.argsort(np.abs(cand - x0) / scales, kind="stable"):
        if frozen[i] or i in int_set or cand[i] == x0[i]:
            continue
        lo_t, hi_t = 0.0, 1.0  # 0 -> original value (invalid), 1 -> candidate value
        for _ in range(cfg.bisect_iters):
            mid = (lo_t + hi_t) / 2.0
            trial = cand.copy()
            trial[i] = x0[i] + mid * (cand[i] - x0[i])
            if _is_target(model, trial, tgt):
                hi_t = mid
            else:
                lo_t = mid
        cand[i] = x0[i] + hi_t * (cand[i] - x0[i])

    # 3) final bisection along the full segment toward the original
    lo_t, hi_t = 0.0, 1.0
    delta = cand - x0
    for _ in range(cfg.bisect_iters):
        mid = (lo_t + hi_t) / 2.0
        trial = x0 + mid * delta
        if int_feats.size:
            trial[int_feats] = np.round(trial[int_feats])
        trial[frozen] = x0[frozen]
        if _is_target(model, trial, tgt):
            hi_t = mid
        else:
            lo_t = mid
    final = x0 + hi_t * delta
    if int_feats.size:
        final[int_feats] = np.round(final[int_feats])
    final[frozen] = x0[frozen]
    return final


def _finish(model, o, x0, cand, original_class, target, lam, cfg) -> CFExample:
    if not _is_target(model, cand, int(target)):
        raise CFNotFound("polishing lost validity")  # pragma: no cover - defensive
    dist = standardized_distance(cand, x0, cfg.feature_scales)
    cf_obs = FilteredObs.from_flat(cand)
    original = o if isinstance(o, FilteredObs) else FilteredObs.from_flat(x0)
    return CFExample(
        original=original,
        original_class=original_class,
        cf=cf_obs,
        target_class=ActionClass(int(target)),
        distance=dist,
        lambda_final=float(lam),
        valid=True,
    )
