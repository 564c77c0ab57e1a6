"""Artificial-potential-field motion synthesis and segment energy measurement.

The motion law is gradient descent on an attractive well at the current
waypoint plus inverse-distance repulsive barriers around obstacle surfaces
and neighboring UAVs:

    U_att(x) = 1/2 * k_att * ||x - p||^2
    U_rep(x) = sum_barriers 1/2 * k_rep * max(0, 1/d - 1/d0)^2
    v = -K * grad(U_att + U_rep), capped at v_max

Repulsive terms vanish once the barrier distance reaches the influence
distance d0. Distances are floored at dist_floor to keep the barrier finite;
inside the floor the gradient keeps pushing outward at the floor magnitude.

The well used by the motion law turns linear beyond att_saturation so the
pull toward a distant waypoint stays bounded and never overpowers the
near-field barriers (head-on pass-through guard). With the default gains the
bound coincides with the speed cap, so free flight is unaffected; energy
measurements keep the pure quadratic well unless a saturation is passed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "FieldConfig",
    "Trajectory",
    "NonConvergenceError",
    "attractive_potential",
    "repulsive_potential",
    "potential_gradient",
    "gradient_step",
    "synthesize_trajectory",
    "repulsive_ratio",
    "save_trajectories_csv",
    "load_trajectories_csv",
]


class NonConvergenceError(RuntimeError):
    """Gradient descent exhausted its step budget before reaching a waypoint."""

    def __init__(self, waypoint_index: int, waypoint, steps: int):
        self.waypoint_index = waypoint_index
        self.waypoint = tuple(float(v) for v in waypoint)
        self.steps = steps
        super().__init__(
            f"stuck approaching waypoint {waypoint_index} at {self.waypoint} after {steps} steps "
            "(likely a local minimum of the potential field)"
        )


@dataclass(frozen=True)
class FieldConfig:
    """Gains and integration settings for the potential-field stepper."""

    k_att: float = 1.0
    k_rep_obs: float = 25000.0
    k_rep_uav: float = 25000.0
    influence_dist: float = 50.0  # d0: barriers vanish beyond this distance
    control_gain: float = 1.0
    dt: float = 0.1
    v_max: float = 10.0
    d_min: float = 10.0  # inter-UAV safety distance
    d_min_obs: float = 20.0  # obstacle safety distance
    dist_floor: float = 0.1  # barrier distance floor, keeps 1/d finite
    att_saturation: float = 10.0  # the well turns linear beyond this distance
    capture_radius: float = 2.0  # waypoint counts as reached inside this radius
    step_budget: int = 20000

    def __post_init__(self):
        if min(self.k_att, self.k_rep_obs, self.k_rep_uav, self.control_gain) <= 0:
            raise ValueError("gains must be positive")
        if self.dt <= 0 or self.v_max <= 0 or self.influence_dist <= 0:
            raise ValueError("dt, v_max and influence_dist must be positive")

    def with_step_budget(self, budget: int) -> "FieldConfig":
        return replace(self, step_budget=budget)


@dataclass
class Trajectory:
    """Time-ordered samples of one UAV. Arrays share the first dimension."""

    t: np.ndarray  # (n,)
    pos: np.ndarray  # (n, 2)
    vel: np.ndarray  # (n, 2)
    waypoint_marks: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.t[start:stop], self.pos[start:stop], self.vel[start:stop])

    def position_at(self, t: float) -> np.ndarray:
        """Sample position at time t, holding the last sample past the end."""
        idx = int(np.searchsorted(self.t, t, side="right")) - 1
        idx = min(max(idx, 0), len(self.t) - 1)
        return self.pos[idx]

    def path_length(self) -> float:
        if len(self.pos) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.pos, axis=0), axis=1)))

    def legs(self) -> list["Trajectory"]:
        """Split into per-waypoint segments using waypoint_marks."""
        bounds = [0] + list(self.waypoint_marks)
        out = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            if b > a:
                out.append(self.slice(a, b + 1))
        return out


def attractive_potential(x, target, k_att: float, saturation: float | None = None) -> float:
    """Quadratic well, turning linear beyond saturation when one is given."""
    offset = np.asarray(x, dtype=float) - np.asarray(target, dtype=float)
    dist = float(np.linalg.norm(offset))
    if saturation is not None and dist > saturation:
        return k_att * saturation * (dist - saturation / 2.0)
    return 0.5 * k_att * dist * dist


def _barrier_energy(dist: float, k_rep: float, cfg: FieldConfig) -> float:
    d = max(dist, cfg.dist_floor)
    if d >= cfg.influence_dist:
        return 0.0
    gap = 1.0 / d - 1.0 / cfg.influence_dist
    return 0.5 * k_rep * gap * gap


def repulsive_potential(x, obstacles, neighbor_positions, cfg: FieldConfig) -> float:
    """Total repulsive energy at x from obstacle surfaces and neighbor UAVs."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for obs in obstacles:
        total += _barrier_energy(obs.surface_distance(x), cfg.k_rep_obs, cfg)
    for other in neighbor_positions:
        dist = float(np.linalg.norm(x - np.asarray(other, dtype=float)))
        total += _barrier_energy(dist, cfg.k_rep_uav, cfg)
    return total


def _barrier_gradient(x, center, dist: float, k_rep: float, cfg: FieldConfig) -> np.ndarray:
    """Gradient of one barrier term at x. center is the barrier source point."""
    if dist >= cfg.influence_dist:
        return np.zeros(2)
    d = max(dist, cfg.dist_floor)
    offset = x - np.asarray(center, dtype=float)
    norm = float(np.linalg.norm(offset))
    direction = offset / norm if norm > 1e-12 else np.array([1.0, 0.0])
    gap = 1.0 / d - 1.0 / cfg.influence_dist
    return -k_rep * gap / (d * d) * direction


def potential_gradient(x, target, obstacles, neighbor_positions, cfg: FieldConfig) -> np.ndarray:
    """Analytic gradient of U_att + U_rep at x, with the saturated well."""
    x = np.asarray(x, dtype=float)
    offset = x - np.asarray(target, dtype=float)
    dist = float(np.linalg.norm(offset))
    if dist > cfg.att_saturation:
        grad = cfg.k_att * cfg.att_saturation * offset / dist
    else:
        grad = cfg.k_att * offset
    for obs in obstacles:
        grad = grad + _barrier_gradient(x, obs.center, obs.surface_distance(x), cfg.k_rep_obs, cfg)
    for other in neighbor_positions:
        other = np.asarray(other, dtype=float)
        dist = float(np.linalg.norm(x - other))
        grad = grad + _barrier_gradient(x, other, dist, cfg.k_rep_uav, cfg)
    return grad


def gradient_step(x, target, obstacles, neighbor_positions, cfg: FieldConfig):
    """One Euler step of the capped gradient flow. Returns (new_position, velocity)."""
    x = np.asarray(x, dtype=float)
    velocity = -cfg.control_gain * potential_gradient(x, target, obstacles, neighbor_positions, cfg)
    speed = float(np.linalg.norm(velocity))
    if speed > cfg.v_max:
        velocity = velocity * (cfg.v_max / speed)
    return x + velocity * cfg.dt, velocity


def synthesize_trajectory(
    route_points,
    obstacles,
    co_trajectories: list[Trajectory],
    cfg: FieldConfig,
) -> Trajectory:
    """Follow the waypoint list with the potential-field stepper.

    route_points are 2-D positions starting and ending at the depot. Neighbor
    repulsion reads each co-trajectory at the current timestamp, holding its
    last sample once it has ended. A waypoint is reached inside
    capture_radius; exhausting the step budget raises NonConvergenceError
    naming the stuck waypoint.
    """
    pts = [np.asarray(p, dtype=float) for p in route_points]
    if len(pts) < 1:
        raise ValueError("route must contain at least the depot")
    times = [0.0]
    positions = [pts[0].copy()]
    velocities = [np.zeros(2)]
    marks: list[int] = []

    def active_neighbors(now: float, waypoint: np.ndarray) -> list[np.ndarray]:
        # a neighbor whose trajectory ended parked inside this waypoint's
        # capture zone has landed there and no longer repels the approach
        out = []
        for traj in co_trajectories:
            p = traj.position_at(now)
            ended = now >= float(traj.t[-1])
            if ended and float(np.linalg.norm(p - waypoint)) <= cfg.capture_radius + cfg.dist_floor:
                continue
            out.append(p)
        return out

    x = pts[0].copy()
    t = 0.0
    steps = 0
    for w_idx, waypoint in enumerate(pts[1:], start=1):
        while float(np.linalg.norm(x - waypoint)) > cfg.capture_radius:
            if steps >= cfg.step_budget:
                raise NonConvergenceError(w_idx, waypoint, steps)
            neighbors = active_neighbors(t, waypoint)
            x, v = gradient_step(x, waypoint, obstacles, neighbors, cfg)
            t += cfg.dt
            steps += 1
            times.append(t)
            positions.append(x.copy())
            velocities.append(v)
        marks.append(len(times) - 1)

    return Trajectory(
        t=np.asarray(times),
        pos=np.asarray(positions),
        vel=np.asarray(velocities),
        waypoint_marks=marks,
    )


def repulsive_ratio(
    segment: Trajectory,
    obstacles,
    co_trajectories: list[Trajectory],
    cfg: FieldConfig,
    target=None,
) -> float:
    """Share of the segment's potential energy contributed by repulsion.

    Trapezoid-integrates U_rep and U_att + U_rep over the segment samples and
    returns their ratio (0 when the denominator vanishes). The attraction
    target defaults to the segment's final sample, which for a synthesized
    leg sits at the waypoint just captured.
    """
    if len(segment) == 0:
        raise ValueError("segment is empty")
    if target is None:
        target = segment.pos[-1]
    rep = np.empty(len(segment))
    att = np.empty(len(segment))
    for i in range(len(segment)):
        neighbors = [traj.position_at(float(segment.t[i])) for traj in co_trajectories]
        rep[i] = repulsive_potential(segment.pos[i], obstacles, neighbors, cfg)
        att[i] = attractive_potential(segment.pos[i], target, cfg.k_att)
    if len(segment) == 1:
        total = rep[0] + att[0]
        return float(rep[0] / total) if total > 0 else 0.0

    dt = np.diff(segment.t)
    num = float(np.sum(0.5 * (rep[:-1] + rep[1:]) * dt))
    den = float(np.sum(0.5 * ((rep + att)[:-1] + (rep + att)[1:]) * dt))
    if den <= 0.0:
        return 0.0
    return min(num / den, 1.0)


def save_trajectories_csv(trajectories: list[Trajectory], path) -> None:
    """Write trajectories to CSV with columns t,x,y,vx,vy,uav_id."""
    import csv

    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "x", "y", "vx", "vy", "uav_id"])
        for uav_id, traj in enumerate(trajectories):
            for i in range(len(traj)):
                writer.writerow(
                    [
                        repr(float(traj.t[i])),
                        repr(float(traj.pos[i, 0])),
                        repr(float(traj.pos[i, 1])),
                        repr(float(traj.vel[i, 0])),
                        repr(float(traj.vel[i, 1])),
                        uav_id,
                    ]
                )


def load_trajectories_csv(path) -> list[Trajectory]:
    """Read trajectories written by save_trajectories_csv, ordered by uav_id."""
    import csv

    rows_by_uav: dict[int, list[list[float]]] = {}
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            rows_by_uav.setdefault(int(row["uav_id"]), []).append(
                [float(row["t"]), float(row["x"]), float(row["y"]), float(row["vx"]), float(row["vy"])]
            )
    out = []
    for uav_id in sorted(rows_by_uav):
        arr = np.asarray(rows_by_uav[uav_id])
        out.append(Trajectory(t=arr[:, 0], pos=arr[:, 1:3], vel=arr[:, 3:5]))
    return out
