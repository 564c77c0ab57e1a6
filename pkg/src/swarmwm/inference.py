"""Online hierarchical decision-making by KL-abnormality minimization.

Each level (mission, route, motion) scores a pool of candidate actions in
three steps built from the probabilistic primitives below:

1. Cost evidence: candidate physical costs are range-normalized to [0, 1]
   (invariant to shifting or scaling all costs) and turned into a softmax
   likelihood over the candidate set with sharpness beta * concentration.
2. Expert prior: each candidate gets prior mass proportional to the mean
   reference probability of its induced symbolic words, with the smoothing
   floor for words never seen in training.
3. Action posterior: the normalized likelihood-prior product. A
   candidate's abnormality is the KL divergence of the belief fully
   committed to that candidate from this posterior, which reduces to the
   candidate's posterior surprisal -log q(a): zero when the posterior
   already agrees with the candidate, growing with relative cost and with
   the unfamiliarity of its words.

The selected action is the abnormality argmin, with ties broken by lower
physical cost and then by a lexicographic action key, which keeps every
decision reproducible.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, MultiPoint

from .potential_field import FieldConfig, potential_gradient
from .symbolic import (
    LetterCodebook,
    MissionWord,
    MotionWord,
    QuantizerConfig,
    RouteWord,
    kmeans,
    quantize_mission,
    quantize_route,
)
from .world_model import ReferenceDistribution, WorldModel

__all__ = [
    "InferenceConfig",
    "Observation",
    "Belief",
    "PlanState",
    "HierarchicalAction",
    "ScoredCandidate",
    "LevelDecision",
    "likelihood",
    "posterior",
    "abnormality",
    "total_abnormality",
    "decide_mission",
    "assign_new_city",
    "decide_route",
    "insert_city",
    "decide_motion",
    "score_candidates",
    "step",
    "mission_candidates",
    "mission_cost",
    "route_cost",
    "score_allocations",
    "score_orders",
    "motion_control_velocity",
]


@dataclass(frozen=True)
class InferenceConfig:
    beta_mission: float = 1.0
    beta_route: float = 1.0
    beta_motion: float = 1.0
    lambda_mission: float = 1.0
    lambda_route: float = 1.0
    lambda_motion: float = 1.0
    # mission cost weights: assignment distance, workload balance, hull overlaps
    w_dist: float = 1.0
    w_bal: float = 0.5
    w_safe: float = 1.0
    # route cost weights: length, sharp turns, inter-route crossings
    w_len: float = 1.0
    w_turn: float = 1.0
    w_cross: float = 1.0
    # motion cost weights: tracking error, obstacle proximity, UAV proximity
    w_track: float = 1.0
    w_obs: float = 1.0
    w_uav: float = 1.0
    concentration: float = 12.0
    mission_pool: int = 30
    route_pool: int = 50
    route_exhaustive_limit: int = 8
    seed: int = 0

    def __post_init__(self):
        if min(self.beta_mission, self.beta_route, self.beta_motion) <= 0:
            raise ValueError("beta must be > 0")


@dataclass
class Observation:
    t: float
    cities: dict[int, tuple[float, float]]
    uav_positions: list[tuple[float, float]]
    uav_predicted: list[tuple[float, float]]
    obstacles: tuple
    depot: tuple[float, float]
    area: tuple[float, float]
    uav_active: list[bool] | None = None  # landed UAVs drop out of safety terms

    def active_mask(self) -> list[bool]:
        if self.uav_active is None:
            return [True] * len(self.uav_positions)
        return self.uav_active


@dataclass
class Belief:
    level: str
    probs: dict[str, float]

    def __post_init__(self):
        total = sum(self.probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"belief sums to {total}")

    def as_arrays(self) -> tuple[list[str], np.ndarray]:
        keys = list(self.probs)
        return keys, np.array([self.probs[k] for k in keys])


def likelihood(costs: dict[str, float], beta: float) -> dict[str, float]:
    """Softmax of -beta * cost over the candidate symbols, overflow-safe."""
    if not costs:
        raise ValueError("need at least one candidate")
    keys = list(costs)
    values = np.array([costs[k] for k in keys], dtype=float)
    logits = -beta * (values - values.min())
    weights = np.exp(logits)
    weights /= weights.sum()
    return dict(zip(keys, weights))


def posterior(like: dict[str, float], reference: dict[str, float], level: str = "Msn") -> Belief:
    """Normalized elementwise product of likelihood and reference."""
    if set(like) != set(reference):
        raise ValueError("likelihood and reference supports differ")
    keys = list(like)
    product = np.array([like[k] * reference[k] for k in keys])
    total = product.sum()
    if total <= 0:
        raise ValueError("disjoint support: posterior mass is zero")
    product /= total
    return Belief(level=level, probs=dict(zip(keys, product)))


def abnormality(belief: Belief, reference: dict[str, float]) -> float:
    """KL(belief || reference) in nats, with 0*log(0) = 0."""
    total = 0.0
    for key, q in belief.probs.items():
        if q <= 0.0:
            continue
        p = reference[key]
        if p <= 0.0:
            return math.inf
        total += q * math.log(q / p)
    return max(total, 0.0)


def total_abnormality(delta_mission: float, delta_route: float, delta_motion: float, cfg: InferenceConfig) -> float:
    return (
        cfg.lambda_mission * delta_mission
        + cfg.lambda_route * delta_route
        + cfg.lambda_motion * delta_motion
    )


# ---------------------------------------------------------------------------
# candidate scoring core
# ---------------------------------------------------------------------------


@dataclass
class ScoredCandidate:
    action: object
    action_key: str
    words: tuple[str, ...]
    cost: float
    delta: float
    belief: Belief


@dataclass
class LevelDecision:
    level: str
    chosen: ScoredCandidate
    candidates: list[ScoredCandidate]
    reference: dict[str, float]  # word-prior over candidate keys
    posterior: Belief

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)


def score_candidates(
    entries: list[tuple[object, str, tuple[str, ...], float]],
    reference: ReferenceDistribution,
    beta: float,
    concentration: float,
    level: str,
) -> LevelDecision:
    """Score (action, action_key, induced word keys, cost) entries and choose.

    See the module docstring for the construction. Candidate keys must be
    unique within a pool.
    """
    if not entries:
        raise ValueError(f"empty candidate set at level {level}")
    keys = [e[1] for e in entries]
    if len(set(keys)) != len(keys):
        raise ValueError(f"duplicate candidate keys at level {level}")

    costs = np.array([e[3] for e in entries], dtype=float)
    span = float(costs.max() - costs.min())
    rel = (costs - costs.min()) / span if span > 0 else np.zeros_like(costs)
    like = likelihood(dict(zip(keys, rel)), beta * concentration)

    prior_raw = np.array(
        [np.mean([reference.probability(w) for w in words]) for _, _, words, _ in entries]
    )
    if prior_raw.sum() <= 0:
        raise ValueError("reference has no mass on any candidate word")
    prior = dict(zip(keys, prior_raw / prior_raw.sum()))

    action_posterior = posterior(like, prior, level=level)

    scored: list[ScoredCandidate] = []
    for action, action_key, words, cost in entries:
        committed = Belief(level=level, probs={k: 1.0 if k == action_key else 0.0 for k in keys})
        scored.append(
            ScoredCandidate(
                action=action,
                action_key=action_key,
                words=words,
                cost=float(cost),
                delta=abnormality(committed, action_posterior.probs),
                belief=committed,
            )
        )
    chosen = min(scored, key=lambda s: (s.delta, s.cost, s.action_key))
    return LevelDecision(
        level=level,
        chosen=chosen,
        candidates=scored,
        reference=prior,
        posterior=action_posterior,
    )


# ---------------------------------------------------------------------------
# mission level
# ---------------------------------------------------------------------------


def _nn_tour_length(points: np.ndarray, depot: np.ndarray) -> float:
    """Greedy nearest-unvisited tour length depot -> points -> depot."""
    if len(points) == 0:
        return 0.0
    remaining = list(range(len(points)))
    current = depot
    total = 0.0
    while remaining:
        dists = [float(np.linalg.norm(points[i] - current)) for i in remaining]
        pick = int(np.argmin(dists))
        total += dists[pick]
        current = points[remaining[pick]]
        remaining.pop(pick)
    total += float(np.linalg.norm(current - depot))
    return total


def _hull(points: np.ndarray):
    return MultiPoint([tuple(p) for p in points]).convex_hull


def mission_cost(allocation: tuple[frozenset, ...], coords: dict[int, tuple[float, float]], depot, cfg: InferenceConfig) -> float:
    """w_dist * NN-tour estimates + w_bal * imbalance + w_safe * hull overlaps."""
    depot = np.asarray(depot, dtype=float)
    lengths = []
    hulls = []
    for subset in allocation:
        pts = np.asarray([coords[c] for c in sorted(subset)], dtype=float).reshape(-1, 2)
        lengths.append(_nn_tour_length(pts, depot))
        hulls.append(_hull(pts) if len(pts) else None)
    lengths = np.asarray(lengths)
    j_dist = float(lengths.sum())
    j_bal = float(np.sum((lengths - lengths.mean()) ** 2)) if len(lengths) else 0.0
    j_safe = 0.0
    for i in range(len(hulls)):
        for j in range(i + 1, len(hulls)):
            if hulls[i] is not None and hulls[j] is not None and hulls[i].intersects(hulls[j]):
                j_safe += 1.0
    return cfg.w_dist * j_dist + cfg.w_bal * j_bal + cfg.w_safe * j_safe


def _allocation_key(allocation: tuple[frozenset, ...]) -> str:
    return ";".join(",".join(str(c) for c in sorted(s)) for s in allocation)


def _canonical_allocation(subsets: list[set]) -> tuple[frozenset, ...]:
    return tuple(frozenset(s) for s in sorted(subsets, key=lambda s: min(s) if s else -1))


def mission_candidates(
    coords: dict[int, tuple[float, float]],
    uav_count: int,
    depot,
    cfg: InferenceConfig,
    current: tuple[frozenset, ...] | None = None,
) -> list[tuple[frozenset, ...]]:
    """Restricted pool of candidate allocations.

    Combines a seeded k-means geographic split, angular sweep partitions at
    several start angles, and single-city moves away from the current
    allocation, deduplicated and capped at cfg.mission_pool.
    """
    ids = sorted(coords)
    if uav_count == 1:
        return [(frozenset(ids),)]
    depot = np.asarray(depot, dtype=float)
    pts = np.asarray([coords[c] for c in ids], dtype=float)
    pool: list[tuple[frozenset, ...]] = []
    seen: set[str] = set()

    def push(subsets: list[set]) -> None:
        if any(len(s) == 0 for s in subsets):
            return
        cand = _canonical_allocation(subsets)
        key = _allocation_key(cand)
        if key not in seen and len(cand) == uav_count:
            seen.add(key)
            pool.append(cand)

    if len(ids) >= uav_count:
        centers, _ = kmeans(pts, uav_count, seed=cfg.seed, restarts=8)
        labels = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2).argmin(axis=1)
        groups = [set() for _ in range(uav_count)]
        for cid, lab in zip(ids, labels):
            groups[int(lab)].add(cid)
        push(groups)

        angles = np.arctan2(pts[:, 1] - depot[1], pts[:, 0] - depot[0])
        for start in np.linspace(0.0, 2 * math.pi, 8, endpoint=False):
            shifted = (angles - start) % (2 * math.pi)
            order = [ids[i] for i in np.argsort(shifted, kind="stable")]
            groups = [set() for _ in range(uav_count)]
            bounds = [round(len(order) * k / uav_count) for k in range(uav_count + 1)]
            for g, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
                groups[g].update(order[a:b])
            push(groups)

    if current is not None:
        for cid in ids:
            src = next((i for i, s in enumerate(current) if cid in s), None)
            if src is None:
                continue
            for dst in range(uav_count):
                if dst == src:
                    continue
                moved = [set(s) for s in current]
                moved[src].discard(cid)
                moved[dst].add(cid)
                push(moved)
            if len(pool) >= cfg.mission_pool:
                break

    if not pool:  # fewer cities than UAVs has no idle-free split; keep best effort
        groups = [set() for _ in range(uav_count)]
        for i, cid in enumerate(ids):
            groups[i % uav_count].add(cid)
        cand = _canonical_allocation(groups)
        pool.append(cand)
    return pool[: cfg.mission_pool]


def _mission_words_of(allocation, coords, n_total, depot, area, quantizer) -> tuple[str, ...]:
    words = []
    for subset in allocation:
        pts = np.asarray([coords[c] for c in sorted(subset)], dtype=float).reshape(-1, 2)
        words.append(quantize_mission(pts, n_total, depot, area, quantizer).key())
    return tuple(sorted(set(words)))


def score_allocations(
    allocations: list[tuple[frozenset, ...]],
    obs: Observation,
    model: WorldModel,
    cfg: InferenceConfig,
) -> LevelDecision:
    """Run the abnormality scorer over explicit candidate allocations."""
    n_total = len(obs.cities)
    entries = []
    for alloc in allocations:
        words = _mission_words_of(alloc, obs.cities, n_total, obs.depot, obs.area, model.quantizer)
        cost = mission_cost(alloc, obs.cities, obs.depot, cfg)
        entries.append((alloc, _allocation_key(alloc), words, cost))
    return score_candidates(
        entries,
        model.mission_ref,
        cfg.beta_mission,
        cfg.concentration,
        level="Msn",
    )


def decide_mission(
    obs: Observation,
    model: WorldModel,
    cfg: InferenceConfig,
    current: tuple[frozenset, ...] | None = None,
) -> LevelDecision:
    if not obs.cities:
        raise ValueError("no cities observed to allocate")
    pool = mission_candidates(obs.cities, len(obs.uav_positions), obs.depot, cfg, current=current)
    return score_allocations(pool, obs, model, cfg)


def assign_new_city(
    obs: Observation,
    model: WorldModel,
    current: tuple[frozenset, ...],
    c_star: int,
    cfg: InferenceConfig,
) -> tuple[int, LevelDecision]:
    """Choose which UAV takes a newly appeared city; returns (uav index, decision)."""
    if any(c_star in s for s in current):
        raise ValueError(f"city {c_star} already assigned")
    candidates = []
    for q in range(len(current)):
        subsets = [set(s) for s in current]
        subsets[q].add(c_star)
        candidates.append(tuple(frozenset(s) for s in subsets))  # keep UAV labels in place

    n_total = len(obs.cities)
    entries = []
    for q, alloc in enumerate(candidates):
        words = _mission_words_of(alloc, obs.cities, n_total, obs.depot, obs.area, model.quantizer)
        cost = mission_cost(alloc, obs.cities, obs.depot, cfg)
        entries.append((q, f"add->{q}", words, cost))
    decision = score_candidates(
        entries,
        model.mission_ref,
        cfg.beta_mission,
        cfg.concentration,
        level="Msn",
    )
    return int(decision.chosen.action), decision


# ---------------------------------------------------------------------------
# route level
# ---------------------------------------------------------------------------


def _closed_points(order: list[int], coords, depot) -> np.ndarray:
    depot = np.asarray(depot, dtype=float)
    pts = [depot] + [np.asarray(coords[c], dtype=float) for c in order] + [depot]
    return np.asarray(pts)


def _turn_cost(path: np.ndarray) -> float:
    """Sum of direction-change excess above 90 degrees along the path."""
    total = 0.0
    for i in range(1, len(path) - 1):
        v1 = path[i] - path[i - 1]
        v2 = path[i + 1] - path[i]
        n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
        if n1 < 1e-9 or n2 < 1e-9:
            continue
        cosang = float(np.clip(np.dot(v1, v2) / (n1 * n2), -1.0, 1.0))
        turn = math.acos(cosang)
        total += max(0.0, turn - math.pi / 2)
    return total


def _crossings(path: np.ndarray, other_paths: list[np.ndarray]) -> int:
    """Count proper segment crossings between this path and the others."""
    count = 0
    segs = [LineString([tuple(path[i]), tuple(path[i + 1])]) for i in range(len(path) - 1)]
    for other in other_paths:
        for j in range(len(other) - 1):
            seg_other = LineString([tuple(other[j]), tuple(other[j + 1])])
            for seg in segs:
                if seg.crosses(seg_other):
                    count += 1
    return count


def route_cost(
    order: list[int],
    coords,
    depot,
    cfg: InferenceConfig,
    other_orders: list[list[int]] | None = None,
) -> float:
    path = _closed_points(order, coords, depot)
    length = float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))
    turn = _turn_cost(path)
    cross = 0
    if other_orders:
        others = [_closed_points(o, coords, depot) for o in other_orders if o]
        cross = _crossings(path, others)
    return cfg.w_len * length + cfg.w_turn * turn + cfg.w_cross * cross


def _route_candidates(city_ids: list[int], coords, depot, cfg: InferenceConfig) -> list[list[int]]:
    if len(city_ids) <= cfg.route_exhaustive_limit:
        return [list(p) for p in itertools.permutations(sorted(city_ids))]
    # nearest-neighbor starts improved by 2-opt, deduplicated, capped
    depot_arr = np.asarray(depot, dtype=float)
    pool: list[list[int]] = []
    seen = set()
    for first in sorted(city_ids):
        order = [first]
        remaining = [c for c in sorted(city_ids) if c != first]
        current = np.asarray(coords[first], dtype=float)
        while remaining:
            nxt = min(remaining, key=lambda c: (float(np.linalg.norm(np.asarray(coords[c]) - current)), c))
            order.append(nxt)
            remaining.remove(nxt)
            current = np.asarray(coords[nxt], dtype=float)
        order = _two_opt(order, coords, depot_arr)
        key = tuple(order)
        if key not in seen:
            seen.add(key)
            pool.append(order)
        if len(pool) >= cfg.route_pool:
            break
    return pool


def _two_opt(order: list[int], coords, depot: np.ndarray) -> list[int]:
    def length(o: list[int]) -> float:
        path = np.vstack([depot, [coords[c] for c in o], depot])
        return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))

    best = list(order)
    best_len = length(best)
    improved = True
    while improved:
        improved = False
        for i in range(len(best) - 1):
            for j in range(i + 1, len(best)):
                cand = best[:i] + best[i : j + 1][::-1] + best[j + 1 :]
                cand_len = length(cand)
                if cand_len < best_len - 1e-9:
                    best, best_len = cand, cand_len
                    improved = True
    return best


def score_orders(
    orders: list[list[int]],
    parent: MissionWord,
    coords,
    obs_depot,
    model: WorldModel,
    cfg: InferenceConfig,
    other_orders: list[list[int]] | None = None,
) -> LevelDecision:
    """Score explicit route orders against the parent-conditioned reference."""
    reference = model.t_mission_route.row_reference(parent.key())
    entries = []
    for order in orders:
        pts = [np.asarray(coords[c], dtype=float) for c in order]
        word = quantize_route(pts, parent, obs_depot, model.quantizer)
        cost = route_cost(order, coords, obs_depot, cfg, other_orders)
        entries.append((list(order), ",".join(str(c) for c in order), (word.key(),), cost))
    return score_candidates(
        entries,
        reference,
        cfg.beta_route,
        cfg.concentration,
        level="Rte",
    )


def decide_route(
    city_ids: list[int],
    parent: MissionWord,
    obs: Observation,
    model: WorldModel,
    cfg: InferenceConfig,
    other_orders: list[list[int]] | None = None,
) -> LevelDecision:
    if not city_ids:
        raise ValueError("route decision needs at least one assigned city")
    pool = _route_candidates(list(city_ids), obs.cities, obs.depot, cfg)
    return score_orders(pool, parent, obs.cities, obs.depot, model, cfg, other_orders)


def insert_city(
    order: list[int],
    c_star: int,
    parent: MissionWord,
    obs: Observation,
    model: WorldModel,
    cfg: InferenceConfig,
    other_orders: list[list[int]] | None = None,
) -> tuple[int, LevelDecision]:
    """Choose the insertion index for a new city; returns (index, decision)."""
    candidates = []
    for j in range(len(order) + 1):
        candidates.append(order[:j] + [c_star] + order[j:])
    decision = score_orders(candidates, parent, obs.cities, obs.depot, model, cfg, other_orders)
    chosen = decision.chosen.action
    insert_at = next(j for j in range(len(order) + 1) if order[:j] + [c_star] + order[j:] == chosen)
    return insert_at, decision


# ---------------------------------------------------------------------------
# motion level
# ---------------------------------------------------------------------------


def _word_profile(word: MotionWord, codebook: LetterCodebook) -> tuple[float, float]:
    """(mean speed, mean repulsive ratio) over the word's letter centroids."""
    if not word.letters:
        return 0.0, 0.0
    feats = np.asarray([codebook.letter_features(letter) for letter in word.letters])
    speed = float(np.clip(feats[:, 0].mean(), 0.0, None))
    rho = float(np.clip(feats[:, 3].mean(), 0.0, 1.0))
    return speed, rho


def motion_control_velocity(
    word: MotionWord,
    codebook: LetterCodebook,
    position,
    target,
    obstacles,
    neighbor_positions,
    field_cfg: FieldConfig,
) -> np.ndarray:
    """Velocity command implied by a motion word at the current state.

    Blends the unit attraction direction with the unit repulsion direction by
    the word's repulsive-ratio centroid and scales by its speed centroid,
    capped at v_max and at the remaining distance per step.
    """
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    speed, rho = _word_profile(word, codebook)
    to_target = target - position
    dist = float(np.linalg.norm(to_target))
    u_att = to_target / dist if dist > 1e-9 else np.zeros(2)
    rep_grad = potential_gradient(position, position, obstacles, neighbor_positions, field_cfg)
    rep_norm = float(np.linalg.norm(rep_grad))
    u_rep = -rep_grad / rep_norm if rep_norm > 1e-9 else np.zeros(2)
    direction = (1.0 - rho) * u_att + rho * u_rep
    dnorm = float(np.linalg.norm(direction))
    direction = direction / dnorm if dnorm > 1e-9 else u_att
    speed = min(speed, field_cfg.v_max)
    if dist > 1e-9:
        speed = min(speed, dist / field_cfg.dt)
    return direction * speed


def decide_motion(
    route_word: RouteWord,
    uav_index: int,
    target,
    obs: Observation,
    model: WorldModel,
    cfg: InferenceConfig,
    field_cfg: FieldConfig,
) -> LevelDecision:
    """Pick the motion word that best explains the filter-predicted state.

    Candidates are dictionary words co-observed with the route word, falling
    back to the whole motion dictionary. Each word implies a reference next
    position; the cost combines tracking error against the predicted
    position with squared-hinge obstacle and neighbor proximity at the
    reference position.
    """
    codebook = model.dictionaries.codebook
    if codebook is None:
        raise ValueError("model has no motion-letter codebook")
    keys = model.motion_words_for_route(route_word.key())
    if not keys:
        keys = sorted(w.key() for w in model.dictionaries.motion)
    if not keys:
        raise ValueError("motion dictionary is empty")

    position = np.asarray(obs.uav_positions[uav_index], dtype=float)
    predicted = np.asarray(obs.uav_predicted[uav_index], dtype=float)
    active = obs.active_mask()
    others_pred = [
        np.asarray(p, dtype=float)
        for i, p in enumerate(obs.uav_predicted)
        if i != uav_index and active[i]
    ]
    reference = model.t_route_motion.row_reference(route_word.key())

    entries = []
    for key in keys:
        word = MotionWord.from_key(key)
        velocity = motion_control_velocity(
            word, codebook, position, target, obs.obstacles, others_pred, field_cfg
        )
        x_ref = position + velocity * field_cfg.dt
        track = float(np.sum((predicted - x_ref) ** 2))
        j_obs = 0.0
        for o in obs.obstacles:
            j_obs += max(0.0, field_cfg.d_min_obs - o.surface_distance(x_ref)) ** 2
        j_uav = 0.0
        for other in others_pred:
            j_uav += max(0.0, field_cfg.d_min - float(np.linalg.norm(x_ref - other))) ** 2
        cost = cfg.w_track * track + cfg.w_obs * j_obs + cfg.w_uav * j_uav
        entries.append((word, key, (key,), cost))

    return score_candidates(
        entries,
        reference,
        cfg.beta_motion,
        cfg.concentration,
        level="Mot",
    )


# ---------------------------------------------------------------------------
# full cascade
# ---------------------------------------------------------------------------


@dataclass
class PlanState:
    allocation: tuple[frozenset, ...] | None = None
    orders: list[list[int]] | None = None
    mission_words: list[MissionWord] | None = None
    route_words: list[RouteWord] | None = None
    progress: list[int] = field(default_factory=list)  # next waypoint index per UAV

    def remaining(self, q: int) -> list[int]:
        return self.orders[q][self.progress[q] :]

    def assigned(self) -> set[int]:
        if self.allocation is None:
            return set()
        return set().union(*self.allocation) if self.allocation else set()


@dataclass
class HierarchicalAction:
    mission: tuple[frozenset, ...]
    routes: list[list[int]]
    motion: list[MotionWord | None]
    delta_mission: float
    delta_route: float
    delta_motion: float
    counts: dict[str, int]
    trace: list[dict]


def _refresh_words(plan: PlanState, obs: Observation, model: WorldModel) -> None:
    plan.mission_words = []
    plan.route_words = []
    for subset, order in zip(plan.allocation, plan.orders):
        pts = np.asarray([obs.cities[c] for c in sorted(subset)], dtype=float).reshape(-1, 2)
        m_word = quantize_mission(pts, len(obs.cities), obs.depot, obs.area, model.quantizer)
        plan.mission_words.append(m_word)
        order_pts = [np.asarray(obs.cities[c], dtype=float) for c in order]
        plan.route_words.append(quantize_route(order_pts, m_word, obs.depot, model.quantizer))


def step(
    obs: Observation,
    model: WorldModel,
    plan: PlanState,
    cfg: InferenceConfig,
    field_cfg: FieldConfig,
    targets: list | None = None,
) -> HierarchicalAction:
    """One pass of the three-level cascade.

    The mission and route levels only re-evaluate when the observed city set
    changes (initial planning or new-city events); otherwise their cached
    decisions stand and contribute zero evaluated candidates. The motion
    level is evaluated every step for each UAV with an active leg target.
    """
    trace: list[dict] = []
    counts = {"mission": 0, "route": 0, "motion": 0}
    delta_mission = 0.0
    delta_route = 0.0

    def record(decision: LevelDecision, note: str) -> None:
        trace.append(
            {
                "t": obs.t,
                "level": decision.level,
                "note": note,
                "chosen": decision.chosen.action_key,
                "candidates": [
                    {"action": s.action_key, "J": s.cost, "delta": s.delta} for s in decision.candidates
                ],
            }
        )

    if plan.allocation is None:
        decision = decide_mission(obs, model, cfg)
        counts["mission"] += decision.n_candidates
        delta_mission = decision.chosen.delta
        record(decision, "initial allocation")
        plan.allocation = decision.chosen.action
        plan.orders = []
        plan.progress = [0] * len(plan.allocation)
        other_orders: list[list[int]] = []
        for q, subset in enumerate(plan.allocation):
            pts = np.asarray([obs.cities[c] for c in sorted(subset)], dtype=float).reshape(-1, 2)
            m_word = quantize_mission(pts, len(obs.cities), obs.depot, obs.area, model.quantizer)
            route_dec = decide_route(sorted(subset), m_word, obs, model, cfg, other_orders)
            counts["route"] += route_dec.n_candidates
            delta_route += route_dec.chosen.delta
            record(route_dec, f"initial route uav {q}")
            plan.orders.append(list(route_dec.chosen.action))
            other_orders.append(list(route_dec.chosen.action))
        _refresh_words(plan, obs, model)
    else:
        new_cities = sorted(set(obs.cities) - plan.assigned())
        for c_star in new_cities:
            q_star, decision = assign_new_city(obs, model, plan.allocation, c_star, cfg)
            counts["mission"] += decision.n_candidates
            delta_mission += decision.chosen.delta
            record(decision, f"assign city {c_star}")
            subsets = [set(s) for s in plan.allocation]
            subsets[q_star].add(c_star)
            plan.allocation = tuple(frozenset(s) for s in subsets)

            remaining = plan.remaining(q_star)
            pts = np.asarray(
                [obs.cities[c] for c in sorted(plan.allocation[q_star])], dtype=float
            ).reshape(-1, 2)
            m_word = quantize_mission(pts, len(obs.cities), obs.depot, obs.area, model.quantizer)
            others = [plan.remaining(r) for r in range(len(plan.orders)) if r != q_star]
            insert_at, route_dec = insert_city(remaining, c_star, m_word, obs, model, cfg, others)
            counts["route"] += route_dec.n_candidates
            delta_route += route_dec.chosen.delta
            record(route_dec, f"insert city {c_star} into uav {q_star}")
            plan.orders[q_star] = plan.orders[q_star][: plan.progress[q_star]] + route_dec.chosen.action
            _refresh_words(plan, obs, model)

    if plan.mission_words is None or plan.route_words is None:
        _refresh_words(plan, obs, model)

    motions: list[MotionWord | None] = []
    delta_motion = 0.0
    if targets is None:
        targets = [None] * len(plan.allocation)
    for q, target in enumerate(targets):
        if target is None:
            motions.append(None)
            continue
        decision = decide_motion(plan.route_words[q], q, target, obs, model, cfg, field_cfg)
        counts["motion"] += decision.n_candidates
        delta_motion += decision.chosen.delta
        record(decision, f"motion uav {q}")
        motions.append(decision.chosen.action)

    counts["evaluated"] = counts["mission"] + counts["route"] + counts["motion"]
    return HierarchicalAction(
        mission=plan.allocation,
        routes=[list(o) for o in plan.orders],
        motion=motions,
        delta_mission=delta_mission,
        delta_route=delta_route,
        delta_motion=delta_motion,
        counts=counts,
        trace=trace,
    )
