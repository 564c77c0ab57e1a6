"""Symbolic abstraction of demonstrations into Mission/Route/Motion words.

Words must recur across unrelated city layouts, so they quantize
depot-relative, scale-normalized descriptors instead of raw geometry:

* Mission word: binned workload share, depot bearing of the subset centroid,
  and normalized centroid radius.
* Route word: its mission word, tour orientation from the signed polygon
  area, and the binned fraction of nearest-unvisited moves.
* Motion word: run-length-compressed sequence of motion letters, one letter
  per inter-city leg, where letters index a k-means codebook over
  motion-feature vectors (speed, heading rate, curvature, repulsive ratio,
  minimum obstacle and neighbor distances).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expert_ga import ExpertDemonstration
from .potential_field import FieldConfig, Trajectory, repulsive_ratio

__all__ = [
    "QuantizerConfig",
    "MissionWord",
    "RouteWord",
    "MotionWord",
    "FeatureVector",
    "LetterCodebook",
    "Dictionaries",
    "SymbolicTriplet",
    "motion_features",
    "fit_letter_codebook",
    "abstract_demonstration",
    "build_dictionaries",
    "run_length_compress",
    "kmeans",
    "quantize_mission",
    "quantize_route",
    "mission_word_for_subset",
    "route_word_for_order",
    "word_from_key",
]

FEATURE_NAMES = ("speed", "heading_rate", "curvature", "repulsive_ratio", "obstacle_dist", "neighbor_dist")


@dataclass(frozen=True)
class QuantizerConfig:
    share_bins: int = 5
    sector_bins: int = 8
    ring_bins: int = 4
    nn_bins: int = 4


@dataclass(frozen=True)
class MissionWord:
    share_bin: int
    sector_bin: int
    ring_bin: int

    def key(self) -> str:
        return f"m:{self.share_bin}-{self.sector_bin}-{self.ring_bin}"

    @classmethod
    def from_key(cls, key: str) -> "MissionWord":
        body = key.split(":", 1)[1]
        s, sec, ring = (int(v) for v in body.split("-"))
        return cls(s, sec, ring)


@dataclass(frozen=True)
class RouteWord:
    parent: MissionWord
    orientation: str  # cw | ccw | mixed
    nn_bin: int

    def key(self) -> str:
        return f"r:{self.parent.key()[2:]}:{self.orientation}:{self.nn_bin}"

    @classmethod
    def from_key(cls, key: str) -> "RouteWord":
        _, parent, orientation, nn = key.split(":")
        return cls(MissionWord.from_key("m:" + parent), orientation, int(nn))


@dataclass(frozen=True)
class MotionWord:
    letters: tuple[int, ...]

    def key(self) -> str:
        return "o:" + ".".join(str(v) for v in self.letters)

    @classmethod
    def from_key(cls, key: str) -> "MotionWord":
        body = key.split(":", 1)[1]
        return cls(tuple(int(v) for v in body.split(".") if v != ""))


WORD_PARSERS = {"m": MissionWord.from_key, "r": RouteWord.from_key, "o": MotionWord.from_key}


def word_from_key(key: str):
    return WORD_PARSERS[key[0]](key)


@dataclass(frozen=True)
class FeatureVector:
    speed: float
    heading_rate: float
    curvature: float
    repulsive_ratio: float
    obstacle_dist: float
    neighbor_dist: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.speed, self.heading_rate, self.curvature, self.repulsive_ratio, self.obstacle_dist, self.neighbor_dist]
        )


@dataclass
class LetterCodebook:
    means: np.ndarray  # per-feature standardization mean
    stds: np.ndarray  # per-feature standardization std (floored)
    centroids: np.ndarray  # (K_L, d) in standardized space

    @property
    def n_letters(self) -> int:
        return len(self.centroids)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.means) / self.stds

    def destandardize(self, standardized: np.ndarray) -> np.ndarray:
        return standardized * self.stds + self.means

    def assign(self, features: np.ndarray) -> np.ndarray:
        """Nearest-centroid letters for raw feature rows; ties pick the lowest id."""
        z = self.standardize(np.atleast_2d(features))
        dists = np.linalg.norm(z[:, None, :] - self.centroids[None, :, :], axis=2)
        return dists.argmin(axis=1)

    def letter_features(self, letter: int) -> np.ndarray:
        """Centroid of one letter in raw feature units."""
        return self.destandardize(self.centroids[letter])

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "centroids": self.centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "LetterCodebook":
        return cls(
            means=np.asarray(payload["means"], dtype=float),
            stds=np.asarray(payload["stds"], dtype=float),
            centroids=np.asarray(payload["centroids"], dtype=float),
        )


@dataclass
class Dictionaries:
    mission: dict[MissionWord, int]
    route: dict[RouteWord, int]
    motion: dict[MotionWord, int]
    codebook: LetterCodebook | None = None

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.mission), len(self.route), len(self.motion)


@dataclass
class SymbolicTriplet:
    """Per-UAV word lists of one demonstration, index-aligned across levels."""

    mission: list[MissionWord]
    route: list[RouteWord]
    motion: list[MotionWord]
    n_cities: int
    uav_count: int


def _neighbor_min_dist(segment: Trajectory, co_trajectories) -> float:
    best = math.inf
    for i, t in enumerate(segment.t):
        for other in co_trajectories:
            d = float(np.linalg.norm(segment.pos[i] - other.position_at(float(t))))
            best = min(best, d)
    return best


def motion_features(segment: Trajectory, obstacles, co_trajectories, field_cfg: FieldConfig) -> FeatureVector:
    """Measure one trajectory slice. Requires at least two samples.

    Speed, heading rate, and curvature come from finite differences of the
    sample velocities; curvature is |heading change| per unit arc length.
    Missing obstacle or neighbor context maps to the sentinel distance
    10 * influence_dist so features stay finite.
    """
    if len(segment) < 2:
        raise ValueError("motion features need at least 2 samples")

    speeds = np.linalg.norm(segment.vel, axis=1)
    moving = speeds > 1e-9
    headings = np.arctan2(segment.vel[:, 1], segment.vel[:, 0])

    turn_rates = []
    curvatures = []
    for i in range(len(segment) - 1):
        if not (moving[i] and moving[i + 1]):
            continue
        dpsi = math.remainder(headings[i + 1] - headings[i], 2 * math.pi)
        dt = float(segment.t[i + 1] - segment.t[i])
        ds = float(np.linalg.norm(segment.pos[i + 1] - segment.pos[i]))
        if dt > 0:
            turn_rates.append(dpsi / dt)
        if ds > 1e-9:
            curvatures.append(abs(dpsi) / ds)

    sentinel = 10.0 * field_cfg.influence_dist
    d_obs = sentinel
    for obs in obstacles:
        dist = np.linalg.norm(segment.pos - obs.center, axis=1) - obs.radius
        d_obs = min(d_obs, float(dist.min()))
    d_uav = _neighbor_min_dist(segment, co_trajectories) if co_trajectories else sentinel
    d_uav = min(d_uav, sentinel)
    d_obs = min(d_obs, sentinel)

    return FeatureVector(
        speed=float(speeds.mean()),
        heading_rate=float(np.mean(turn_rates)) if turn_rates else 0.0,
        curvature=float(np.mean(curvatures)) if curvatures else 0.0,
        repulsive_ratio=repulsive_ratio(segment, obstacles, co_trajectories, field_cfg),
        obstacle_dist=max(d_obs, 0.0),
        neighbor_dist=max(d_uav, 0.0),
    )


def kmeans(data: np.ndarray, k: int, seed: int, restarts: int = 50, max_iter: int = 100) -> tuple[np.ndarray, float]:
    """Plain Lloyd k-means with seeded restarts, keeping the best inertia.

    Deterministic for a given seed: restarts draw initial centers from one
    generator and ties in assignment go to the lowest centroid index.
    """
    data = np.asarray(data, dtype=float)
    rng = np.random.default_rng(seed)
    best_centers = None
    best_inertia = math.inf
    n = len(data)
    for _ in range(restarts):
        centers = data[rng.choice(n, size=k, replace=False)].copy()
        for _ in range(max_iter):
            dists = np.linalg.norm(data[:, None, :] - centers[None, :, :], axis=2)
            labels = dists.argmin(axis=1)
            new_centers = centers.copy()
            for j in range(k):
                mask = labels == j
                if mask.any():
                    new_centers[j] = data[mask].mean(axis=0)
            if np.allclose(new_centers, centers, atol=1e-12, rtol=0.0):
                centers = new_centers
                break
            centers = new_centers
        dists = np.linalg.norm(data[:, None, :] - centers[None, :, :], axis=2)
        inertia = float((dists.min(axis=1) ** 2).sum())
        if inertia < best_inertia - 1e-15:
            best_inertia = inertia
            best_centers = centers.copy()
    return best_centers, best_inertia


def fit_letter_codebook(features: list[FeatureVector], n_letters: int, seed: int, restarts: int = 50) -> LetterCodebook:
    """Standardize features and cluster them into the motion-letter alphabet."""
    rows = np.asarray([f.as_array() for f in features], dtype=float)
    distinct = len(np.unique(rows, axis=0))
    if distinct < n_letters:
        raise ValueError(
            f"only {distinct} distinct feature vectors for {n_letters} letters; reduce the alphabet size"
        )
    means = rows.mean(axis=0)
    stds = rows.std(axis=0)
    stds = np.where(stds < 1e-12, 1.0, stds)
    z = (rows - means) / stds
    centers, _ = kmeans(z, n_letters, seed=seed, restarts=restarts)
    return LetterCodebook(means=means, stds=stds, centroids=centers)


def run_length_compress(letters) -> tuple[int, ...]:
    out: list[int] = []
    for letter in letters:
        if not out or out[-1] != letter:
            out.append(int(letter))
    return tuple(out)


def _share_bin(share: float, cfg: QuantizerConfig) -> int:
    return min(int(share * cfg.share_bins), cfg.share_bins - 1)


def _sector_bin(angle: float, cfg: QuantizerConfig) -> int:
    frac = (angle % (2 * math.pi)) / (2 * math.pi)
    return min(int(frac * cfg.sector_bins), cfg.sector_bins - 1)


def _ring_bin(radius: float, max_radius: float, cfg: QuantizerConfig) -> int:
    frac = radius / max_radius if max_radius > 0 else 0.0
    return min(int(frac * cfg.ring_bins), cfg.ring_bins - 1)


def quantize_mission(subset_points: np.ndarray, n_total: int, depot, area, cfg: QuantizerConfig) -> MissionWord:
    """Quantize a city subset: workload share, depot bearing of the centroid,
    and normalized centroid radius. An empty subset maps to the zero word."""
    pts = np.asarray(subset_points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return MissionWord(0, 0, 0)
    depot = np.asarray(depot, dtype=float)
    centroid = pts.mean(axis=0)
    offset = centroid - depot
    max_radius = float(np.hypot(area[0] / 2.0, area[1] / 2.0))
    share = len(pts) / n_total if n_total > 0 else 0.0
    return MissionWord(
        share_bin=_share_bin(share, cfg),
        sector_bin=_sector_bin(math.atan2(offset[1], offset[0]), cfg),
        ring_bin=_ring_bin(float(np.linalg.norm(offset)), max_radius, cfg),
    )


def mission_word_for_subset(subset, instance, cfg: QuantizerConfig) -> MissionWord:
    ids = sorted(subset)
    pts = np.asarray([[instance.cities[c - 1].x, instance.cities[c - 1].y] for c in ids]).reshape(-1, 2)
    return quantize_mission(pts, instance.n_cities, instance.depot, instance.area, cfg)


def _orientation_from_points(ordered_points: list[np.ndarray], depot) -> str:
    if len(ordered_points) < 2:
        return "mixed"
    pts = [np.asarray(depot, dtype=float)] + [np.asarray(p, dtype=float) for p in ordered_points]
    area2 = 0.0
    for a, b in zip(pts, pts[1:] + [pts[0]]):
        area2 += float(a[0] * b[1] - b[0] * a[1])
    spread = max(float(np.ptp([p[0] for p in pts])), float(np.ptp([p[1] for p in pts])), 1.0)
    if abs(area2) < 1e-9 * spread * spread:
        return "mixed"
    return "ccw" if area2 > 0 else "cw"


def nearest_neighbor_fraction_points(ordered_points: list[np.ndarray], depot) -> float:
    """Fraction of hops that move to the nearest not-yet-visited point."""
    if not ordered_points:
        return 1.0
    pts = [np.asarray(p, dtype=float) for p in ordered_points]
    remaining = list(range(len(pts)))
    current = np.asarray(depot, dtype=float)
    hits = 0
    for idx in range(len(pts)):
        dists = {i: float(np.linalg.norm(pts[i] - current)) for i in remaining}
        if math.isclose(dists[idx], min(dists.values()), rel_tol=0.0, abs_tol=1e-9):
            hits += 1
        remaining.remove(idx)
        current = pts[idx]
    return hits / len(pts)


def quantize_route(ordered_points, parent: MissionWord, depot, cfg: QuantizerConfig) -> RouteWord:
    frac = nearest_neighbor_fraction_points(list(ordered_points), depot)
    nn_bin = min(int(frac * cfg.nn_bins), cfg.nn_bins - 1)
    return RouteWord(parent=parent, orientation=_orientation_from_points(list(ordered_points), depot), nn_bin=nn_bin)


def nearest_neighbor_fraction(order: list[int], instance, dmat: np.ndarray) -> float:
    pts = [np.array([instance.cities[c - 1].x, instance.cities[c - 1].y]) for c in order]
    return nearest_neighbor_fraction_points(pts, instance.depot)


def route_word_for_order(order: list[int], parent: MissionWord, instance, dmat: np.ndarray, cfg: QuantizerConfig) -> RouteWord:
    pts = [np.array([instance.cities[c - 1].x, instance.cities[c - 1].y]) for c in order]
    return quantize_route(pts, parent, instance.depot, cfg)


def motion_word_for_trajectory(
    traj: Trajectory, obstacles, co_trajectories, codebook: LetterCodebook, field_cfg: FieldConfig
) -> MotionWord:
    legs = traj.legs()
    if not legs:
        return MotionWord(letters=())
    rows = np.asarray(
        [motion_features(leg, obstacles, co_trajectories, field_cfg).as_array() for leg in legs]
    )
    letters = codebook.assign(rows)
    return MotionWord(letters=run_length_compress(letters))


def abstract_demonstration(
    demo: ExpertDemonstration,
    codebook: LetterCodebook,
    quantizer: QuantizerConfig | None = None,
    field_cfg: FieldConfig | None = None,
) -> SymbolicTriplet:
    """Convert one demonstration into its per-UAV symbolic word triplet."""
    from .scenario import distance_matrix

    quantizer = quantizer or QuantizerConfig()
    field_cfg = field_cfg or FieldConfig()
    dmat = distance_matrix(demo.instance)

    mission_words = []
    route_words = []
    motion_words = []
    for q, order in enumerate(demo.routes):
        m_word = mission_word_for_subset(order, demo.instance, quantizer)
        mission_words.append(m_word)
        route_words.append(route_word_for_order(order, m_word, demo.instance, dmat, quantizer))
        others = [traj for r, traj in enumerate(demo.trajectories) if r != q]
        motion_words.append(
            motion_word_for_trajectory(demo.trajectories[q], demo.instance.obstacles, others, codebook, field_cfg)
        )
    return SymbolicTriplet(
        mission=mission_words,
        route=route_words,
        motion=motion_words,
        n_cities=demo.instance.n_cities,
        uav_count=demo.instance.uav_count,
    )


def build_dictionaries(triplets: list[SymbolicTriplet], codebook: LetterCodebook | None = None) -> Dictionaries:
    """Count unique words per level across all triplets."""
    if not triplets:
        raise ValueError("need at least one triplet")
    mission: dict[MissionWord, int] = {}
    route: dict[RouteWord, int] = {}
    motion: dict[MotionWord, int] = {}
    for trip in triplets:
        for w in trip.mission:
            mission[w] = mission.get(w, 0) + 1
        for w in trip.route:
            route[w] = route.get(w, 0) + 1
        for w in trip.motion:
            motion[w] = motion.get(w, 0) + 1
    return Dictionaries(mission=mission, route=route, motion=motion, codebook=codebook)
