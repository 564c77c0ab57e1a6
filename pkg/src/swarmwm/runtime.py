"""Offline and online pipelines plus evaluation metrics.

run_offline generates expert demonstrations, abstracts them, and learns the
world model. run_online simulates a mission with noisy measurements,
filter-corrected state estimates, and per-step hierarchical decisions; the
expert optimizer is never invoked inside the online loop, which the metrics
report asserts by counting optimizer entries.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from . import expert_ga
from .expert_ga import ExpertDemonstration, GAConfig, evolve, load_demonstration, save_demonstration
from .filters import EKFState, NoiseConfig, ekf_predict, ekf_update, make_particles, pf_mean, pf_step, transition
from .inference import (
    HierarchicalAction,
    InferenceConfig,
    Observation,
    PlanState,
    motion_control_velocity,
    step as inference_step,
)
from .potential_field import FieldConfig, Trajectory, gradient_step
from .scenario import City, MissionInstance, Obstacle, generate_instance
from .symbolic import (
    LetterCodebook,
    MotionWord,
    QuantizerConfig,
    abstract_demonstration,
    fit_letter_codebook,
    motion_features,
    run_length_compress,
)
from .world_model import WorldModel, learn_world_model

log = logging.getLogger(__name__)

__all__ = [
    "Event",
    "SimConfig",
    "MetricsReport",
    "preset_config",
    "run_offline",
    "learn_from_demos",
    "run_online",
    "similarity_metrics",
    "success_flags",
    "head_on_scenario",
]


@dataclass(frozen=True)
class Event:
    time: float
    kind: str  # new_city | new_obstacle
    position: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0

    def to_dict(self) -> dict:
        payload = {"time": self.time, "kind": self.kind, "position": list(self.position)}
        if self.kind == "new_obstacle":
            payload["radius"] = self.radius
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "Event":
        return cls(
            time=float(payload["time"]),
            kind=str(payload["kind"]),
            position=tuple(payload.get("position", (0.0, 0.0))),
            radius=float(payload.get("radius", 0.0)),
        )


@dataclass
class SimConfig:
    seed: int = 0
    n_missions: int = 50
    n_cities_min: int = 4
    n_cities_max: int = 10
    cities_per_uav: int = 5
    q_max: int = 3
    area: tuple[float, float] = (1000.0, 1000.0)
    n_obstacles: int = 0
    alpha: float = 1.0
    n_letters: int = 8
    swarm_bin_width: int = 10
    n_test: int = 1000
    max_sim_time: float = 1200.0
    pf_particles: int = 200
    predictor: str = "ekf"  # which filter feeds the motion-level prediction
    events: list[Event] = dc_field(default_factory=list)
    ga: GAConfig = dc_field(default_factory=GAConfig)
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    inference: InferenceConfig = dc_field(default_factory=InferenceConfig)
    noise: NoiseConfig = dc_field(default_factory=NoiseConfig)
    quantizer: QuantizerConfig = dc_field(default_factory=QuantizerConfig)

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: e.time)
        if self.predictor not in ("ekf", "pf"):
            raise ValueError("predictor must be 'ekf' or 'pf'")

    def uav_count_for(self, n_cities: int) -> int:
        return max(1, min(self.q_max, math.ceil(n_cities / self.cities_per_uav)))


def preset_config(name: str, seed: int = 0) -> SimConfig:
    """Named configurations: 'ci' finishes in minutes, 'full' runs for hours."""
    if name == "ci":
        return SimConfig(
            seed=seed,
            n_missions=50,
            n_cities_min=4,
            n_cities_max=10,
            cities_per_uav=5,
            q_max=2,
            n_obstacles=0,
            n_letters=4,
            swarm_bin_width=5,
            n_test=10,
            ga=GAConfig(population=60, generations=80, stall_generations=25, mu_obs=0.0, mu_uav=0.0, seed=seed),
        )
    if name == "full":
        return SimConfig(
            seed=seed,
            n_missions=5000,
            n_cities_min=30,
            n_cities_max=60,
            cities_per_uav=25,
            q_max=4,
            n_obstacles=2,
            n_letters=8,
            swarm_bin_width=10,
            n_test=1000,
            ga=GAConfig(population=200, generations=500, seed=seed),
        )
    raise ValueError(f"unknown preset {name!r} (expected 'ci' or 'full')")


# ---------------------------------------------------------------------------
# offline phase
# ---------------------------------------------------------------------------


def _demo_paths(out_dir: Path, index: int) -> tuple[Path, Path]:
    return out_dir / f"demo_{index:05d}.json", out_dir / f"demo_{index:05d}_traj.csv"


def run_offline(config: SimConfig, out_dir) -> tuple[Path, WorldModel, dict]:
    """Generate demonstrations, learn the world model, and report stats.

    Demonstration files already present are kept (resumable). The model is
    always rebuilt from the files on disk, so a resumed run and a fresh run
    produce byte-identical models. Returns (demo dir, model, stats).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sizes = itertools.cycle(range(config.n_cities_min, config.n_cities_max + 1))
    skipped = 0
    for m in range(config.n_missions):
        n_cities = next(sizes)
        json_path, csv_path = _demo_paths(out_dir, m)
        if json_path.exists() and csv_path.exists():
            continue
        instance = generate_instance(
            seed=config.seed + m,
            n_cities=n_cities,
            uav_count=config.uav_count_for(n_cities),
            area=config.area,
            n_obstacles=config.n_obstacles,
        )
        ga_cfg = GAConfig(
            population=config.ga.population,
            generations=config.ga.generations,
            tournament_k=config.ga.tournament_k,
            crossover_rate=config.ga.crossover_rate,
            mutation_rate=config.ga.mutation_rate,
            elitism=config.ga.elitism,
            mu_bal=config.ga.mu_bal,
            mu_obs=config.ga.mu_obs,
            mu_uav=config.ga.mu_uav,
            seed=config.seed + m,
            stall_generations=config.ga.stall_generations,
        )
        try:
            demo = evolve(instance, ga_cfg, config.field)
        except Exception as exc:  # a single failed instance must not sink the corpus
            log.warning("skipping mission %d (seed %d): %s", m, config.seed + m, exc)
            skipped += 1
            continue
        save_demonstration(demo, json_path, csv_path)

    model, n_loaded = learn_from_demos(config, out_dir)
    stats = {"requested": config.n_missions, "learned_from": n_loaded, "skipped": skipped}
    return out_dir, model, stats


def learn_from_demos(config: SimConfig, demo_dir) -> tuple[WorldModel, int]:
    demo_files = sorted(Path(demo_dir).glob("demo_*.json"))
    if not demo_files:
        raise RuntimeError(f"no demonstrations found in {demo_dir}")
    demos = [load_demonstration(p) for p in demo_files]

    features = []
    for demo in demos:
        for q, traj in enumerate(demo.trajectories):
            others = [t for r, t in enumerate(demo.trajectories) if r != q]
            for leg in traj.legs():
                features.append(motion_features(leg, demo.instance.obstacles, others, config.field))
    n_letters = min(config.n_letters, len({tuple(f.as_array()) for f in features}))
    codebook = fit_letter_codebook(features, n_letters, seed=config.seed)

    triplets = [abstract_demonstration(d, codebook, config.quantizer, config.field) for d in demos]
    model = learn_world_model(
        triplets,
        codebook,
        alpha=config.alpha,
        swarm_bin_width=config.swarm_bin_width,
        quantizer=config.quantizer,
        meta={"missions": len(demos), "seed": config.seed, "n_letters": n_letters},
    )
    return model, len(demos)


# ---------------------------------------------------------------------------
# online phase
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    completion_time: float
    total_distance: float
    min_inter_uav_distance: float
    below_dmin_fraction: float
    division_similarity: float | None
    order_similarity: float | None
    rmse_ekf: float
    rmse_pf: float
    rmse_meas: float
    abnormality: dict[str, list[float]]
    success: dict[str, bool | None]
    candidate_counts: list[dict[str, int]]
    plan_routes: list[list[int]]
    ga_invocations: int
    steps: int

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return None
            return v

        return {
            "completion_time": clean(self.completion_time),
            "total_distance": self.total_distance,
            "min_inter_uav_distance": clean(self.min_inter_uav_distance),
            "below_dmin_fraction": self.below_dmin_fraction,
            "division_similarity": self.division_similarity,
            "order_similarity": self.order_similarity,
            "rmse_ekf": self.rmse_ekf,
            "rmse_pf": self.rmse_pf,
            "rmse_meas": self.rmse_meas,
            "abnormality": self.abnormality,
            "success": self.success,
            "plan_routes": self.plan_routes,
            "ga_invocations": self.ga_invocations,
            "steps": self.steps,
        }


def _kendall_similarity(a: list[int], b: list[int]) -> float:
    """1 - normalized discordant-pair count between two orders of one set."""
    shared = [c for c in a if c in set(b)]
    if len(shared) < 2:
        return 1.0
    pos_b = {c: i for i, c in enumerate(b) if c in set(shared)}
    discordant = 0
    total = 0
    for i in range(len(shared)):
        for j in range(i + 1, len(shared)):
            total += 1
            if pos_b[shared[i]] > pos_b[shared[j]]:
                discordant += 1
    return 1.0 - discordant / total


def similarity_metrics(
    plan_routes: list[list[int]],
    expert_routes: list[list[int]],
) -> tuple[float, float]:
    """(division similarity, order similarity) against an expert plan.

    Division: the best-matched fraction of identically assigned cities over
    all UAV label permutations. Order: mean Kendall-tau similarity over the
    matched route pairs restricted to shared cities.
    """
    q = len(expert_routes)
    if len(plan_routes) != q:
        raise ValueError("plans have different UAV counts")
    n_cities = sum(len(r) for r in expert_routes)
    best_match = 0
    best_perm = tuple(range(q))
    for perm in itertools.permutations(range(q)):
        match = sum(len(set(plan_routes[perm[i]]) & set(expert_routes[i])) for i in range(q))
        if match > best_match:
            best_match = match
            best_perm = perm
    division = best_match / n_cities if n_cities else 1.0
    order_scores = [
        _kendall_similarity(plan_routes[best_perm[i]], expert_routes[i]) for i in range(q)
    ]
    order = float(np.mean(order_scores)) if order_scores else 1.0
    return division, order


def _ordering_matches(plan_routes: list[list[int]], expert_routes: list[list[int]]) -> bool:
    """True when every matched route equals the expert's up to reversal."""
    q = len(expert_routes)
    for perm in itertools.permutations(range(q)):
        if all(
            plan_routes[perm[i]] == expert_routes[i] or plan_routes[perm[i]] == expert_routes[i][::-1]
            for i in range(q)
        ):
            return True
    return False


def success_flags(
    instance: MissionInstance,
    plan_routes: list[list[int]],
    visited: set[int],
    returned: list[bool],
    delta_missions: list[float],
    expert_routes: list[list[int]] | None,
    motion_match_fraction: float | None,
    motion_threshold: float = 0.5,
) -> dict[str, bool | None]:
    all_cities = {c.id for c in instance.cities}
    assigned_once = sorted(c for route in plan_routes for c in route) == sorted(all_cities)
    division = assigned_once and all(math.isfinite(d) for d in delta_missions)
    ordering = _ordering_matches(plan_routes, expert_routes) if expert_routes is not None else None
    motion = None if motion_match_fraction is None else motion_match_fraction >= motion_threshold
    completion = visited == all_cities and all(returned)
    return {"division": division, "ordering": ordering, "motion": motion, "completion": completion}


def run_online(
    instance: MissionInstance,
    model: WorldModel,
    config: SimConfig,
    expert_plan: ExpertDemonstration | None = None,
    out_dir=None,
) -> MetricsReport:
    """Simulate one mission with the learned model in the loop.

    Measurements are noisy positions; an EKF per UAV corrects them (a
    particle filter runs alongside for its RMSE metric). Events are applied
    at their scheduled times; new cities are assigned and inserted without
    rerunning the expert optimizer. The first tick only plans; motion
    execution starts on the next tick.
    """
    field_cfg = config.field
    inf_cfg = config.inference
    rng = np.random.default_rng(config.seed + 510)
    ga_calls_before = expert_ga.EVOLVE_CALLS

    depot = np.asarray(instance.depot, dtype=float)
    q_count = instance.uav_count
    cities: dict[int, tuple[float, float]] = {c.id: (c.x, c.y) for c in instance.cities}
    obstacles: list[Obstacle] = list(instance.obstacles)
    pending = sorted(config.events, key=lambda e: e.time)
    next_city_id = instance.n_cities + 1

    truth = [np.concatenate([depot, np.zeros(2)]) for _ in range(q_count)]
    ekfs = [EKFState(mean=truth[q].copy(), cov=np.eye(4) * 1e-4) for q in range(q_count)]
    pfs = [
        make_particles(truth[q], np.eye(4) * 1e-4, config.pf_particles, seed=config.seed + 1000 + q)
        for q in range(q_count)
    ]
    controls: list[np.ndarray | None] = [None] * q_count

    plan = PlanState()
    visited: set[int] = set()
    returned = [False] * q_count
    homeward = [False] * q_count

    sq_err_ekf: list[float] = []
    sq_err_pf: list[float] = []
    sq_err_meas: list[float] = []
    min_pair_dist = math.inf
    below_dmin_steps = 0
    total_distance = 0.0
    abn = {"mission": [], "route": [], "motion": []}
    counts_log: list[dict[str, int]] = []
    delta_missions: list[float] = []
    trace_rows: list[dict] = []
    filter_rows: list[list] = []

    # per-UAV executed samples and per-leg word votes for the motion metric
    samples: list[list[list[float]]] = [[[0.0, depot[0], depot[1], 0.0, 0.0]] for _ in range(q_count)]
    word_votes: dict[tuple[int, int], dict[str, int]] = {}
    leg_spans: dict[tuple[int, int], tuple[int, int]] = {}
    leg_start_idx = [0] * q_count

    t = 0.0
    steps = 0
    completion_time = None
    max_steps = int(config.max_sim_time / field_cfg.dt)

    while steps < max_steps:
        while pending and pending[0].time <= t + 1e-9:
            event = pending.pop(0)
            if event.kind == "new_city":
                cities[next_city_id] = (float(event.position[0]), float(event.position[1]))
                next_city_id += 1
            elif event.kind == "new_obstacle":
                obstacles.append(Obstacle(event.position[0], event.position[1], event.radius))

        estimates = [ekfs[q].mean.copy() for q in range(q_count)]
        predicted = []
        for q in range(q_count):
            if config.predictor == "pf":
                ahead = transition(pf_mean(pfs[q]), controls[q], field_cfg.dt)
                predicted.append((float(ahead[0]), float(ahead[1])))
            else:
                pred = ekf_predict(ekfs[q], controls[q], field_cfg.dt, config.noise)
                predicted.append(tuple(pred.position))

        obs = Observation(
            t=t,
            cities=dict(cities),
            uav_positions=[tuple(e[:2]) for e in estimates],
            uav_predicted=predicted,
            obstacles=tuple(obstacles),
            depot=tuple(depot),
            area=instance.area,
            uav_active=[not r for r in returned],
        )

        if plan.orders is not None:
            targets = [_current_target(plan, q, cities, depot, homeward, returned) for q in range(q_count)]
        else:
            targets = None  # first tick: plan only

        action = inference_step(obs, model, plan, inf_cfg, field_cfg, targets=targets)
        # a new city may have been inserted into a route that was already
        # finished; pull that UAV out of its homeward leg
        if plan.orders is not None:
            for q in range(q_count):
                if not returned[q] and homeward[q] and plan.progress[q] < len(plan.orders[q]):
                    homeward[q] = False
                    targets = [_current_target(plan, r, cities, depot, homeward, returned) for r in range(q_count)] if targets is not None else None
        abn["mission"].append(action.delta_mission)
        abn["route"].append(action.delta_route)
        abn["motion"].append(action.delta_motion)
        counts_log.append(dict(action.counts))
        if action.counts["mission"]:
            delta_missions.append(action.delta_mission)
        trace_rows.extend(action.trace)

        # execute the selected motion words on the true state
        if targets is not None:
            for q in range(q_count):
                target = targets[q]
                word = action.motion[q]
                if target is None or word is None:
                    controls[q] = None
                    continue
                u = motion_control_velocity(
                    word,
                    model.dictionaries.codebook,
                    truth[q][:2],
                    target,
                    obstacles,
                    [predicted[r] for r in range(q_count) if r != q and not returned[r]],
                    field_cfg,
                )
                controls[q] = u
                if not homeward[q] and plan.progress[q] < len(plan.orders[q]):
                    key = (q, plan.progress[q])
                    word_votes.setdefault(key, {})
                    word_votes[key][word.key()] = word_votes[key].get(word.key(), 0) + 1
        else:
            controls = [None] * q_count

        moved = False
        for q in range(q_count):
            if controls[q] is None:
                continue
            moved = True
            noise_vec = rng.multivariate_normal(np.zeros(4), config.noise.process)
            new_pos = truth[q][:2] + controls[q] * field_cfg.dt + noise_vec[:2]
            total_distance += float(np.linalg.norm(new_pos - truth[q][:2]))
            truth[q] = np.concatenate([new_pos, controls[q]])

        if q_count > 1 and moved:
            for a in range(q_count):
                for b in range(a + 1, q_count):
                    d = float(np.linalg.norm(truth[a][:2] - truth[b][:2]))
                    min_pair_dist = min(min_pair_dist, d)
                    if d < field_cfg.d_min:
                        below_dmin_steps += 1

        t += field_cfg.dt
        steps += 1
        for q in range(q_count):
            samples[q].append([t, truth[q][0], truth[q][1], truth[q][2], truth[q][3]])

        for q in range(q_count):
            meas = truth[q][:2] + rng.multivariate_normal(np.zeros(2), config.noise.measurement)
            pred = ekf_predict(ekfs[q], controls[q], field_cfg.dt, config.noise)
            ekfs[q] = ekf_update(pred, meas, config.noise)
            pfs[q] = pf_step(pfs[q], controls[q], meas, config.noise, field_cfg.dt)
            sq_err_ekf.append(float(np.sum((ekfs[q].position - truth[q][:2]) ** 2)))
            sq_err_pf.append(float(np.sum((pf_mean(pfs[q])[:2] - truth[q][:2]) ** 2)))
            sq_err_meas.append(float(np.sum((meas - truth[q][:2]) ** 2)))
            filter_rows.append(
                [t, q, truth[q][0], truth[q][1], meas[0], meas[1], ekfs[q].position[0], ekfs[q].position[1], float(np.trace(ekfs[q].cov))]
            )

        # waypoint bookkeeping on true positions
        if plan.orders is not None:
            for q in range(q_count):
                target = _current_target(plan, q, cities, depot, homeward, returned)
                if target is None:
                    continue
                if float(np.linalg.norm(truth[q][:2] - np.asarray(target))) <= field_cfg.capture_radius:
                    if homeward[q]:
                        returned[q] = True
                    else:
                        leg_key = (q, plan.progress[q])
                        leg_spans[leg_key] = (leg_start_idx[q], len(samples[q]) - 1)
                        leg_start_idx[q] = len(samples[q]) - 1
                        visited.add(plan.orders[q][plan.progress[q]])
                        plan.progress[q] += 1
                        if plan.progress[q] >= len(plan.orders[q]):
                            homeward[q] = True

        if plan.orders is not None and all(returned):
            completion_time = t
            break

    motion_fraction = _motion_match_fraction(
        samples, leg_spans, word_votes, model, obstacles, field_cfg, q_count
    )

    report = _build_metrics(
        instance,
        model,
        config,
        plan,
        visited,
        returned,
        completion_time if completion_time is not None else t,
        completion_time is not None,
        total_distance,
        min_pair_dist,
        below_dmin_steps,
        steps,
        q_count,
        sq_err_ekf,
        sq_err_pf,
        sq_err_meas,
        abn,
        counts_log,
        delta_missions,
        expert_plan,
        motion_fraction,
        cities,
        ga_calls_before,
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "decisions.jsonl", "w") as handle:
            for row in trace_rows:
                handle.write(json.dumps(row, sort_keys=True) + "\n")
        import csv

        with open(out_dir / "filter_trace.csv", "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["t", "uav_id", "truth_x", "truth_y", "meas_x", "meas_y", "est_x", "est_y", "trace_P"])
            writer.writerows(filter_rows)
        (out_dir / "metrics.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return report


def _motion_match_fraction(samples, leg_spans, word_votes, model, obstacles, field_cfg, q_count):
    """Per UAV: does the modal predicted motion word over the route match the
    word abstracted from the executed legs? Returns the matching fraction."""
    if not leg_spans or model.dictionaries.codebook is None:
        return None
    trajectories = []
    for q in range(q_count):
        arr = np.asarray(samples[q])
        trajectories.append(Trajectory(t=arr[:, 0], pos=arr[:, 1:3], vel=arr[:, 3:5]))
    matches = []
    for q in range(q_count):
        spans = sorted((leg, bounds) for (uq, leg), bounds in leg_spans.items() if uq == q)
        if not spans:
            continue
        others = [trajectories[r] for r in range(q_count) if r != q]
        letters = []
        for _, (a, b) in spans:
            if b - a < 1:
                continue
            segment = trajectories[q].slice(a, b + 1)
            feats = motion_features(segment, obstacles, others, field_cfg)
            letters.extend(model.dictionaries.codebook.assign(feats.as_array()[None, :]))
        if not letters:
            continue
        observed = MotionWord(letters=run_length_compress(letters)).key()
        votes: dict[str, int] = {}
        for (uq, _), v in word_votes.items():
            if uq == q:
                for key, count in v.items():
                    votes[key] = votes.get(key, 0) + count
        if not votes:
            continue
        predicted = max(sorted(votes), key=lambda k: votes[k])
        matches.append(predicted == observed)
    if not matches:
        return None
    return float(np.mean(matches))


def _current_target(plan: PlanState, q: int, cities, depot, homeward, returned):
    if plan.orders is None or returned[q]:
        return None
    if homeward[q] or plan.progress[q] >= len(plan.orders[q]):
        if not homeward[q]:
            homeward[q] = True
        return tuple(depot)
    return cities[plan.orders[q][plan.progress[q]]]


def _build_metrics(
    instance,
    model,
    config,
    plan,
    visited,
    returned,
    end_time,
    completed,
    total_distance,
    min_pair_dist,
    below_dmin_steps,
    steps,
    q_count,
    sq_err_ekf,
    sq_err_pf,
    sq_err_meas,
    abn,
    counts_log,
    delta_missions,
    expert_plan,
    motion_fraction,
    cities,
    ga_calls_before,
) -> MetricsReport:
    division = order = None
    expert_routes = None
    if expert_plan is not None:
        expert_routes = [list(r) for r in expert_plan.routes]
        if plan.orders is not None and len(plan.orders) == len(expert_routes):
            division, order = similarity_metrics([list(o) for o in plan.orders], expert_routes)

    # extend the instance with event cities so feasibility covers them
    extra = [City(i, x, y) for i, (x, y) in sorted(cities.items()) if i > instance.n_cities]
    full_instance = instance
    if extra:
        full_instance = MissionInstance(
            cities=tuple(list(instance.cities) + extra),
            depot=instance.depot,
            obstacles=instance.obstacles,
            uav_count=instance.uav_count,
            area=instance.area,
            seed=instance.seed,
        )

    plan_routes = [list(o) for o in (plan.orders or [])]
    success = success_flags(
        full_instance,
        plan_routes,
        visited,
        returned,
        delta_missions or [0.0],
        expert_routes,
        motion_fraction,
    )

    def rmse(values: list[float]) -> float:
        return float(np.sqrt(np.mean(values))) if values else float("nan")

    return MetricsReport(
        completion_time=end_time if completed else float("inf"),
        total_distance=total_distance,
        min_inter_uav_distance=min_pair_dist if q_count > 1 else float("inf"),
        below_dmin_fraction=below_dmin_steps / max(1, steps * q_count * (q_count - 1) // 2),
        division_similarity=division,
        order_similarity=order,
        rmse_ekf=rmse(sq_err_ekf),
        rmse_pf=rmse(sq_err_pf),
        rmse_meas=rmse(sq_err_meas),
        abnormality=abn,
        success=success,
        candidate_counts=counts_log,
        plan_routes=plan_routes,
        ga_invocations=expert_ga.EVOLVE_CALLS - ga_calls_before,
        steps=steps,
    )


def head_on_scenario(
    k_rep_uav: float,
    separation: float = 200.0,
    lateral_offset: float = 0.0,
    field_cfg: FieldConfig | None = None,
    max_steps: int = 2000,
) -> dict:
    """Two UAVs fly toward each other's start points with mutual repulsion.

    Both step jointly per tick using the other's current position. Returns
    min separation, fraction of steps below d_min, and whether repulsion
    ever engaged (any step with both inside the influence distance).
    """
    base = field_cfg or FieldConfig()
    cfg = replace(base, k_rep_uav=k_rep_uav if k_rep_uav > 0 else 1e-12)
    engaged_cfg = k_rep_uav > 0
    a = np.array([0.0, 0.0])
    b = np.array([separation, lateral_offset])
    goal_a, goal_b = b.copy(), a.copy()
    min_dist = math.inf
    below = 0
    steps = 0
    engaged = False
    while steps < max_steps:
        done_a = float(np.linalg.norm(a - goal_a)) <= cfg.capture_radius
        done_b = float(np.linalg.norm(b - goal_b)) <= cfg.capture_radius
        if done_a and done_b:
            break
        next_a, next_b = a, b
        if not done_a:
            next_a, _ = gradient_step(a, goal_a, [], [b] if engaged_cfg else [], cfg)
        if not done_b:
            next_b, _ = gradient_step(b, goal_b, [], [a] if engaged_cfg else [], cfg)
        a, b = next_a, next_b
        d = float(np.linalg.norm(a - b))
        min_dist = min(min_dist, d)
        if d < cfg.d_min:
            below += 1
        if d < cfg.influence_dist:
            engaged = True
        steps += 1
    return {
        "min_distance": min_dist,
        "below_dmin_fraction": below / max(steps, 1),
        "repulsion_engaged": engaged and engaged_cfg,
        "steps": steps,
        "completed": steps < max_steps,
    }
