"""Offline expert planner: a genetic algorithm over grand-tour chromosomes
with potential-field trajectory synthesis for the final elite.

The objective combines total travel distance, workload balance, and
squared-hinge safety penalties for obstacle proximity and inter-UAV
separation. During evolution the safety terms are measured on straight
waypoint segments sampled at constant speed; the returned demonstration
carries exact penalties computed on synthesized trajectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .potential_field import (
    FieldConfig,
    NonConvergenceError,
    Trajectory,
    load_trajectories_csv,
    save_trajectories_csv,
    synthesize_trajectory,
)
from .scenario import MissionInstance, distance_matrix, validate_solution

__all__ = [
    "Chromosome",
    "GAConfig",
    "ExpertDemonstration",
    "distance_cost",
    "balance_cost",
    "safety_penalties",
    "fitness",
    "evolve",
    "nearest_neighbor_order",
    "save_demonstration",
    "load_demonstration",
]

# incremented by evolve(); lets the runtime assert the optimizer stays offline
EVOLVE_CALLS = 0


@dataclass(frozen=True)
class Chromosome:
    """Grand tour of all cities plus Q-1 break indices cutting it into routes."""

    grand_tour: tuple[int, ...]
    breaks: tuple[int, ...]

    def decode(self) -> list[list[int]]:
        """Per-UAV city orders (possibly empty when idle UAVs are allowed)."""
        bounds = [0, *self.breaks, len(self.grand_tour)]
        return [list(self.grand_tour[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


@dataclass(frozen=True)
class GAConfig:
    population: int = 200
    generations: int = 500
    tournament_k: int = 3
    crossover_rate: float = 0.9
    mutation_rate: float = 0.2
    elitism: int = 2
    mu_bal: float = 0.1
    mu_obs: float = 1000.0
    mu_uav: float = 1000.0
    seed: int = 0
    stall_generations: int | None = 100
    allow_idle: bool = False

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        for rate in (self.crossover_rate, self.mutation_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")


@dataclass
class ExpertDemonstration:
    instance: MissionInstance
    allocation: tuple[tuple[int, ...], ...]
    routes: list[list[int]]  # per-UAV city orders, depot implicit at both ends
    trajectories: list[Trajectory]
    costs: dict[str, float]  # dist, bal, obs, uav, total
    seed: int
    fitness_history: list[float] = field(default_factory=list)

    def node_routes(self) -> list[list[int]]:
        """Routes as depot-closed node sequences for the feasibility checker."""
        return [[0, *r, 0] if r else [] for r in self.routes]


def closed_route_length(order: list[int], dmat: np.ndarray) -> float:
    if not order:
        return 0.0
    nodes = [0, *order, 0]
    return float(sum(dmat[a, b] for a, b in zip(nodes[:-1], nodes[1:])))


def distance_cost(routes: list[list[int]], dmat: np.ndarray) -> float:
    return sum(closed_route_length(r, dmat) for r in routes)


def balance_cost(routes: list[list[int]], dmat: np.ndarray) -> float:
    lengths = np.array([closed_route_length(r, dmat) for r in routes])
    if len(lengths) == 0:
        return 0.0
    return float(np.sum((lengths - lengths.mean()) ** 2))


def _aligned_positions(trajectories: list[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Stack trajectories on the longest time grid with zero-order hold.

    Returns (t, positions) with positions shaped (T, Q, 2). Trajectories are
    assumed to share the start time and step, as the synthesizer produces.
    """
    longest = max(trajectories, key=len)
    t = longest.t
    stacked = np.empty((len(t), len(trajectories), 2))
    for q, traj in enumerate(trajectories):
        n = len(traj)
        stacked[:n, q] = traj.pos[: len(t)]
        if n < len(t):
            stacked[n:, q] = traj.pos[-1]
    return t, stacked


def safety_penalties(trajectories: list[Trajectory], obstacles, cfg: FieldConfig) -> tuple[float, float]:
    """Trapezoid-integrated squared-hinge separation deficits (J_obs, J_uav).

    The inter-UAV term counts both ordered pairs, matching the double sum of
    the planning objective.
    """
    if not trajectories:
        return 0.0, 0.0
    t, pos = _aligned_positions(trajectories)
    n_uav = pos.shape[1]

    obs_deficit = np.zeros(len(t))
    for q in range(n_uav):
        for obs in obstacles:
            dist = np.linalg.norm(pos[:, q] - obs.center, axis=1) - obs.radius
            obs_deficit += np.maximum(0.0, cfg.d_min_obs - dist) ** 2

    uav_deficit = np.zeros(len(t))
    for q in range(n_uav):
        for r in range(n_uav):
            if r == q:
                continue
            dist = np.linalg.norm(pos[:, q] - pos[:, r], axis=1)
            uav_deficit += np.maximum(0.0, cfg.d_min - dist) ** 2

    if len(t) < 2:
        return 0.0, 0.0
    dt = np.diff(t)
    j_obs = float(np.sum(0.5 * (obs_deficit[:-1] + obs_deficit[1:]) * dt))
    j_uav = float(np.sum(0.5 * (uav_deficit[:-1] + uav_deficit[1:]) * dt))
    return j_obs, j_uav


def _segment_proxy_positions(order: list[int], points: np.ndarray, step: float) -> np.ndarray:
    """Constant-speed samples along the closed polyline depot -> order -> depot."""
    nodes = [0, *order, 0]
    waypoints = points[nodes]
    samples = [waypoints[0]]
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        seg = b - a
        length = float(np.linalg.norm(seg))
        n = max(1, int(np.ceil(length / step)))
        for k in range(1, n + 1):
            samples.append(a + seg * (k / n))
    return np.asarray(samples)


def _proxy_safety(routes: list[list[int]], instance: MissionInstance, field_cfg: FieldConfig) -> tuple[float, float]:
    """Cheap straight-segment stand-in for safety_penalties used inside the GA."""
    step = max(field_cfg.d_min, field_cfg.d_min_obs) / 2.0
    points = instance.positions()
    tracks = [_segment_proxy_positions(r, points, step) for r in routes]
    dt_proxy = step / field_cfg.v_max

    j_obs = 0.0
    if instance.obstacles:
        for track in tracks:
            for obs in instance.obstacles:
                dist = np.linalg.norm(track - obs.center, axis=1) - obs.radius
                j_obs += float(np.sum(np.maximum(0.0, field_cfg.d_min_obs - dist) ** 2)) * dt_proxy

    j_uav = 0.0
    if len(tracks) > 1:
        longest = max(len(trk) for trk in tracks)
        padded = np.stack(
            [np.vstack([trk, np.repeat(trk[-1:], longest - len(trk), axis=0)]) for trk in tracks]
        )
        for q in range(len(tracks)):
            for r in range(len(tracks)):
                if r == q:
                    continue
                dist = np.linalg.norm(padded[q] - padded[r], axis=1)
                j_uav += float(np.sum(np.maximum(0.0, field_cfg.d_min - dist) ** 2)) * dt_proxy
    return j_obs, j_uav


def fitness(
    chrom: Chromosome,
    instance: MissionInstance,
    cfg: GAConfig,
    field_cfg: FieldConfig,
    dmat: np.ndarray | None = None,
) -> float:
    if dmat is None:
        dmat = distance_matrix(instance)
    routes = chrom.decode()
    total = distance_cost(routes, dmat) + cfg.mu_bal * balance_cost(routes, dmat)
    if (cfg.mu_obs > 0 and instance.obstacles) or (cfg.mu_uav > 0 and len(routes) > 1):
        j_obs, j_uav = _proxy_safety(routes, instance, field_cfg)
        total += cfg.mu_obs * j_obs + cfg.mu_uav * j_uav
    return total


def nearest_neighbor_order(dmat: np.ndarray, cities: list[int], start: int = 0) -> list[int]:
    """Greedy nearest-unvisited order over the given city ids."""
    remaining = list(cities)
    order = []
    current = start
    while remaining:
        nxt = min(remaining, key=lambda c: (dmat[current, c], c))
        order.append(nxt)
        remaining.remove(nxt)
        current = nxt
    return order


def _random_breaks(rng: np.random.Generator, n: int, q: int, allow_idle: bool) -> tuple[int, ...]:
    if q == 1:
        return ()
    if allow_idle or n < q:
        return tuple(sorted(int(v) for v in rng.integers(0, n + 1, size=q - 1)))
    return tuple(sorted(int(v) for v in rng.choice(np.arange(1, n), size=q - 1, replace=False)))


def _balanced_breaks(n: int, q: int) -> tuple[int, ...]:
    return tuple(round(n * k / q) for k in range(1, q))


def _ordered_crossover(rng: np.random.Generator, p1: tuple[int, ...], p2: tuple[int, ...]) -> tuple[int, ...]:
    n = len(p1)
    if n < 2:
        return p1
    a, b = sorted(rng.choice(n + 1, size=2, replace=False))
    middle = p1[a:b]
    chosen = set(middle)
    filler = [g for g in p2 if g not in chosen]
    return tuple(filler[:a]) + middle + tuple(filler[a:])


def _mutate_tour(rng: np.random.Generator, tour: tuple[int, ...], rate: float) -> tuple[int, ...]:
    genes = list(tour)
    n = len(genes)
    if n >= 2 and rng.random() < rate:
        i, j = rng.choice(n, size=2, replace=False)
        genes[i], genes[j] = genes[j], genes[i]
    if n >= 2 and rng.random() < rate:
        a, b = sorted(rng.choice(n + 1, size=2, replace=False))
        genes[a:b] = reversed(genes[a:b])
    return tuple(genes)


def _combine_breaks(
    rng: np.random.Generator, b1: tuple[int, ...], b2: tuple[int, ...], n: int, q: int, allow_idle: bool
) -> tuple[int, ...]:
    if q == 1:
        return ()
    picked = [b1[i] if rng.random() < 0.5 else b2[i] for i in range(q - 1)]
    picked.sort()
    if allow_idle or n < q:
        return tuple(picked)
    if len(set(picked)) == q - 1 and picked[0] >= 1 and picked[-1] <= n - 1:
        return tuple(picked)
    return _random_breaks(rng, n, q, allow_idle)


def evolve(instance: MissionInstance, cfg: GAConfig, field_cfg: FieldConfig | None = None) -> ExpertDemonstration:
    """Run the GA and return the best plan as a full expert demonstration.

    Deterministic per cfg.seed. The elite's trajectories are synthesized with
    the potential field (retrying once with a doubled step budget on a
    local-minimum trap) and the reported cost breakdown uses exact safety
    penalties on those trajectories.
    """
    global EVOLVE_CALLS
    EVOLVE_CALLS += 1

    if field_cfg is None:
        field_cfg = FieldConfig()
    rng = np.random.default_rng(cfg.seed)
    dmat = distance_matrix(instance)
    n = instance.n_cities
    q = instance.uav_count
    allow_idle = cfg.allow_idle or n < q
    city_ids = list(range(1, n + 1))

    def spawn() -> Chromosome:
        return Chromosome(
            grand_tour=tuple(int(v) for v in rng.permutation(city_ids)),
            breaks=_random_breaks(rng, n, q, allow_idle),
        )

    nn_breaks = _balanced_breaks(n, q) if q <= n else _random_breaks(rng, n, q, allow_idle)
    population = [Chromosome(tuple(nearest_neighbor_order(dmat, city_ids)), nn_breaks)]
    population += [spawn() for _ in range(cfg.population - len(population))]
    scores = np.array([fitness(c, instance, cfg, field_cfg, dmat) for c in population])

    history: list[float] = [float(scores.min())]
    best_idx = int(scores.argmin())
    best, best_score = population[best_idx], float(scores[best_idx])
    stall = 0

    for _ in range(cfg.generations):
        order = np.argsort(scores, kind="stable")
        elite = [population[i] for i in order[: cfg.elitism]]

        children: list[Chromosome] = list(elite)
        while len(children) < cfg.population:
            picks = rng.integers(0, cfg.population, size=2 * cfg.tournament_k)
            i1 = min(picks[: cfg.tournament_k], key=lambda i: scores[i])
            i2 = min(picks[cfg.tournament_k :], key=lambda i: scores[i])
            p1, p2 = population[i1], population[i2]
            if rng.random() < cfg.crossover_rate:
                tour = _ordered_crossover(rng, p1.grand_tour, p2.grand_tour)
                breaks = _combine_breaks(rng, p1.breaks, p2.breaks, n, q, allow_idle)
            else:
                tour, breaks = p1.grand_tour, p1.breaks
            tour = _mutate_tour(rng, tour, cfg.mutation_rate)
            if q > 1 and rng.random() < cfg.mutation_rate:
                breaks = _random_breaks(rng, n, q, allow_idle)
            children.append(Chromosome(tour, breaks))

        population = children
        scores = np.array([fitness(c, instance, cfg, field_cfg, dmat) for c in population])
        gen_best = int(scores.argmin())
        if scores[gen_best] < best_score - 1e-12:
            best, best_score = population[gen_best], float(scores[gen_best])
            stall = 0
        else:
            stall += 1
        history.append(best_score)
        if cfg.stall_generations is not None and stall >= cfg.stall_generations:
            break

    routes = best.decode()
    points = instance.positions()
    trajectories: list[Trajectory] = []
    for route in routes:
        waypoints = [points[0], *[points[c] for c in route], points[0]]
        try:
            traj = synthesize_trajectory(waypoints, instance.obstacles, trajectories, field_cfg)
        except NonConvergenceError:
            traj = synthesize_trajectory(
                waypoints, instance.obstacles, trajectories, field_cfg.with_step_budget(2 * field_cfg.step_budget)
            )
        trajectories.append(traj)

    j_obs, j_uav = safety_penalties(trajectories, instance.obstacles, field_cfg)
    j_dist = distance_cost(routes, dmat)
    j_bal = balance_cost(routes, dmat)
    costs = {
        "dist": j_dist,
        "bal": j_bal,
        "obs": j_obs,
        "uav": j_uav,
        "total": j_dist + cfg.mu_bal * j_bal + cfg.mu_obs * j_obs + cfg.mu_uav * j_uav,
    }

    demo = ExpertDemonstration(
        instance=instance,
        allocation=tuple(tuple(r) for r in routes),
        routes=routes,
        trajectories=trajectories,
        costs=costs,
        seed=cfg.seed,
        fitness_history=history,
    )
    report = validate_solution(instance, [set(r) for r in routes], demo.node_routes())
    if not report.ok:
        raise RuntimeError(f"GA produced an infeasible plan: {report.violations}")
    return demo


def save_demonstration(demo: ExpertDemonstration, json_path, csv_path) -> None:
    payload = {
        "instance": demo.instance.to_dict(),
        "allocation": [list(a) for a in demo.allocation],
        "routes": [list(r) for r in demo.routes],
        "cost_breakdown": demo.costs,
        "seed": demo.seed,
        "fitness_history": demo.fitness_history,
        "waypoint_marks": [list(t.waypoint_marks) for t in demo.trajectories],
        "trajectory_csv": str(Path(csv_path).name),
    }
    Path(json_path).write_text(json.dumps(payload, indent=1, sort_keys=True))
    save_trajectories_csv(demo.trajectories, csv_path)


def load_demonstration(json_path) -> ExpertDemonstration:
    payload = json.loads(Path(json_path).read_text())
    instance = MissionInstance.from_dict(payload["instance"])
    csv_path = Path(json_path).parent / payload["trajectory_csv"]
    trajectories = load_trajectories_csv(csv_path)
    for traj, marks in zip(trajectories, payload.get("waypoint_marks", [])):
        traj.waypoint_marks = [int(v) for v in marks]
    return ExpertDemonstration(
        instance=instance,
        allocation=tuple(tuple(a) for a in payload["allocation"]),
        routes=[list(r) for r in payload["routes"]],
        trajectories=trajectories,
        costs=dict(payload["cost_breakdown"]),
        seed=int(payload["seed"]),
        fitness_history=list(payload.get("fitness_history", [])),
    )
