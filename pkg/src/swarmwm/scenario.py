"""Mission instances, distance matrices, and MTSP feasibility checking.

A mission instance is a set of target cities in a bounded 2-D area, a common
depot at the area center, disk obstacles, and a UAV count. Node index 0 is the
depot; cities carry ids 1..N matching their distance-matrix rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "City",
    "Obstacle",
    "MissionInstance",
    "FeasibilityReport",
    "Violation",
    "InstanceError",
    "generate_instance",
    "distance_matrix",
    "validate_solution",
]

MAX_PLACEMENT_ATTEMPTS = 1000


class InstanceError(ValueError):
    """Raised when an instance cannot be generated or parsed."""


@dataclass(frozen=True)
class City:
    id: int
    x: float
    y: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Obstacle:
    """Disk obstacle. Distance to the obstacle is distance to its surface."""

    x: float
    y: float
    radius: float

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def surface_distance(self, point) -> float:
        return float(np.hypot(point[0] - self.x, point[1] - self.y) - self.radius)


@dataclass(frozen=True)
class MissionInstance:
    cities: tuple[City, ...]
    depot: tuple[float, float]
    obstacles: tuple[Obstacle, ...]
    uav_count: int
    area: tuple[float, float]
    seed: int
    altitude_m: float = 200.0  # metadata only; planning is horizontal

    def __post_init__(self):
        ids = [c.id for c in self.cities]
        if ids != list(range(1, len(ids) + 1)):
            raise InstanceError("city ids must be contiguous 1..N")
        if self.uav_count < 1:
            raise InstanceError("uav_count must be >= 1")
        for o in self.obstacles:
            if o.surface_distance(self.depot) <= 0:
                raise InstanceError("obstacle contains the depot")

    @property
    def n_cities(self) -> int:
        return len(self.cities)

    def positions(self) -> np.ndarray:
        """(N+1, 2) array of node coordinates, row 0 = depot."""
        rows = [self.depot] + [(c.x, c.y) for c in self.cities]
        return np.asarray(rows, dtype=float)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "area": list(self.area),
            "depot": list(self.depot),
            "cities": [{"id": c.id, "x": c.x, "y": c.y} for c in self.cities],
            "obstacles": [{"x": o.x, "y": o.y, "r": o.radius} for o in self.obstacles],
            "uav_count": self.uav_count,
            "altitude_m": self.altitude_m,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MissionInstance":
        try:
            return cls(
                cities=tuple(City(int(c["id"]), float(c["x"]), float(c["y"])) for c in payload["cities"]),
                depot=(float(payload["depot"][0]), float(payload["depot"][1])),
                obstacles=tuple(
                    Obstacle(float(o["x"]), float(o["y"]), float(o["r"])) for o in payload.get("obstacles", [])
                ),
                uav_count=int(payload["uav_count"]),
                area=(float(payload["area"][0]), float(payload["area"][1])),
                seed=int(payload.get("seed", 0)),
                altitude_m=float(payload.get("altitude_m", 200.0)),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise InstanceError(f"malformed instance payload: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "MissionInstance":
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InstanceError(f"invalid instance file {path}: {exc}") from exc
        return cls.from_dict(payload)


@dataclass(frozen=True)
class Violation:
    constraint_id: str  # visit | flow | subtour | outgoing | depot_out | depot_in | depot_balance
    detail: str


@dataclass
class FeasibilityReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, constraint_id: str, detail: str) -> None:
        self.violations.append(Violation(constraint_id, detail))


def generate_instance(
    seed: int,
    n_cities: int,
    uav_count: int,
    area: tuple[float, float] = (1000.0, 1000.0),
    n_obstacles: int = 0,
    obstacle_radius: tuple[float, float] | None = None,
    obstacle_margin: float = 20.0,
) -> MissionInstance:
    """Sample a mission instance: depot at area center, cities uniform in the
    area outside all obstacle disks. Fully deterministic per seed.

    Cities and the depot keep obstacle_margin clearance from every obstacle
    surface; a target inside the safety margin could never be visited
    without violating it. Raises InstanceError when placement keeps failing,
    which indicates the area is too small or too blocked for the request.
    """
    if n_cities < 1:
        raise InstanceError("n_cities must be >= 1")
    if area[0] <= 0 or area[1] <= 0:
        raise InstanceError("area dimensions must be positive")
    rng = np.random.default_rng(seed)
    depot = (area[0] / 2.0, area[1] / 2.0)
    if obstacle_radius is None:
        span = min(area) / 2.0
        obstacle_radius = (0.03 * span, 0.08 * span)

    obstacles: list[Obstacle] = []
    attempts = 0
    while len(obstacles) < n_obstacles:
        if attempts >= MAX_PLACEMENT_ATTEMPTS:
            raise InstanceError("could not place obstacles clear of the depot")
        attempts += 1
        cx = rng.uniform(0.0, area[0])
        cy = rng.uniform(0.0, area[1])
        r = rng.uniform(*obstacle_radius)
        cand = Obstacle(cx, cy, r)
        if cand.surface_distance(depot) > obstacle_margin:
            obstacles.append(cand)

    cities: list[City] = []
    attempts = 0
    while len(cities) < n_cities:
        if attempts >= MAX_PLACEMENT_ATTEMPTS * max(1, n_cities):
            raise InstanceError("could not place cities outside obstacles; area too constrained")
        attempts += 1
        x = rng.uniform(0.0, area[0])
        y = rng.uniform(0.0, area[1])
        if any(o.surface_distance((x, y)) <= obstacle_margin for o in obstacles):
            continue
        cities.append(City(len(cities) + 1, float(x), float(y)))

    return MissionInstance(
        cities=tuple(cities),
        depot=depot,
        obstacles=tuple(obstacles),
        uav_count=uav_count,
        area=(float(area[0]), float(area[1])),
        seed=seed,
    )


def distance_matrix(instance: MissionInstance) -> np.ndarray:
    """(N+1) x (N+1) Euclidean distances between all nodes, row/col 0 = depot."""
    pts = instance.positions()
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def _route_edges(route: list[int]) -> list[tuple[int, int]]:
    return list(zip(route[:-1], route[1:]))


def validate_solution(
    instance: MissionInstance,
    allocation: list[list[int]] | list[frozenset],
    routes: list[list[int]],
) -> FeasibilityReport:
    """Check a candidate plan against the MTSP constraints.

    Routes are node sequences with 0 for the depot; a working route is
    [0, c1, ..., ck, 0] and an idle UAV has an empty route. Checks, per
    constraint id:

    * visit / outgoing: each city entered and departed exactly once across
      the whole swarm,
    * flow: per UAV, in-degree equals out-degree at every visited city,
    * subtour: per UAV, all traversed nodes are reachable from the depot
      through that UAV's own edges (single connected tour),
    * depot_out / depot_in / depot_balance: at most one departure and one
      return per UAV, and departures equal returns.

    Violations are collected, never raised.
    """
    report = FeasibilityReport()
    n = instance.n_cities
    city_ids = set(range(1, n + 1))

    if len(routes) != instance.uav_count or len(allocation) != instance.uav_count:
        report.add("visit", f"expected {instance.uav_count} routes/allocations, got {len(routes)}/{len(allocation)}")
        return report

    for q, route in enumerate(routes):
        bad = [node for node in route if node != 0 and node not in city_ids]
        if bad:
            report.add("visit", f"uav {q}: unknown node ids {bad}")
            return report

    entered = {c: 0 for c in city_ids}
    departed = {c: 0 for c in city_ids}
    for q, route in enumerate(routes):
        for i, j in _route_edges(route):
            if j != 0:
                entered[j] += 1
            if i != 0:
                departed[i] += 1

    for c in sorted(city_ids):
        if entered[c] != 1:
            report.add("visit", f"city {c} entered {entered[c]} times (expected 1)")
        if departed[c] != 1:
            report.add("outgoing", f"city {c} departed {departed[c]} times (expected 1)")

    for q, route in enumerate(routes):
        edges = _route_edges(route)
        out_deg: dict[int, int] = {}
        in_deg: dict[int, int] = {}
        for i, j in edges:
            out_deg[i] = out_deg.get(i, 0) + 1
            in_deg[j] = in_deg.get(j, 0) + 1
        for c in set(out_deg) | set(in_deg):
            if c == 0:
                continue
            if out_deg.get(c, 0) != in_deg.get(c, 0):
                report.add("flow", f"uav {q}: city {c} in/out degree {in_deg.get(c, 0)}/{out_deg.get(c, 0)}")

        depot_out = sum(1 for i, j in edges if i == 0)
        depot_in = sum(1 for i, j in edges if j == 0)
        if depot_out > 1:
            report.add("depot_out", f"uav {q}: {depot_out} depot departures")
        if depot_in > 1:
            report.add("depot_in", f"uav {q}: {depot_in} depot returns")
        if depot_out != depot_in:
            report.add("depot_balance", f"uav {q}: {depot_out} departures vs {depot_in} returns")

        # single-cycle connectivity from the depot over this UAV's edges
        if edges:
            adjacency: dict[int, list[int]] = {}
            for i, j in edges:
                adjacency.setdefault(i, []).append(j)
            nodes = {i for e in edges for i in e}
            if 0 not in nodes:
                report.add("subtour", f"uav {q}: tour does not touch the depot")
            else:
                seen = {0}
                stack = [0]
                while stack:
                    for nxt in adjacency.get(stack.pop(), []):
                        if nxt not in seen:
                            seen.add(nxt)
                            stack.append(nxt)
                stranded = sorted(nodes - seen)
                if stranded:
                    report.add("subtour", f"uav {q}: nodes {stranded} unreachable from depot")

    # allocation must be a disjoint cover consistent with the routes
    alloc_sets = [set(a) for a in allocation]
    for q, (subset, route) in enumerate(zip(alloc_sets, routes)):
        route_cities = {node for node in route if node != 0}
        if subset != route_cities:
            report.add("visit", f"uav {q}: allocation {sorted(subset)} differs from route cities {sorted(route_cities)}")
    covered = set().union(*alloc_sets) if alloc_sets else set()
    if covered != city_ids:
        missing = sorted(city_ids - covered)
        extra = sorted(covered - city_ids)
        if missing:
            report.add("visit", f"allocation misses cities {missing}")
        if extra:
            report.add("visit", f"allocation has unknown cities {extra}")

    return report
