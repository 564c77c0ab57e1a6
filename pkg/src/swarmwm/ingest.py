"""Flight-log ingestion: velocity clustering with Growing Neural Gas,
combined transition estimation, and Bayesian label prediction/correction.

Recorded 3-D trajectories are differentiated into velocity samples, the
samples are vector-quantized by a GNG network, and the resulting label
sequences drive a first-order transition model. Online, the next label is
predicted from the transition row and corrected by an observation
likelihood concentrated on the measured label.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .world_model import TransitionMatrix, estimate_transition

__all__ = [
    "FlightLog",
    "GNGConfig",
    "GNGCodebook",
    "ClusterSequence",
    "FlightLogError",
    "load_flightlog",
    "generate_synthetic_flightlog",
    "velocities_from_log",
    "gng_fit",
    "label_sequence",
    "combined_transition",
    "predict_and_correct",
]


class FlightLogError(ValueError):
    pass


@dataclass
class FlightLog:
    uav_series: dict[int, np.ndarray]  # uav_id -> (n, 4) rows of t, x, y, z
    gaps: list[tuple[int, int]] = field(default_factory=list)  # (uav_id, sample index)

    @property
    def uav_ids(self) -> list[int]:
        return sorted(self.uav_series)


def load_flightlog(path) -> FlightLog:
    """Parse a CSV with header t,x,y,z,uav_id; flags dt gaps above 2x median."""
    rows_by_uav: dict[int, list[list[float]]] = {}
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"t", "x", "y", "z", "uav_id"}
        if reader.fieldnames is None or not required.issubset(set(reader.fieldnames)):
            raise FlightLogError(f"flight log needs columns {sorted(required)}, got {reader.fieldnames}")
        for row in reader:
            rows_by_uav.setdefault(int(row["uav_id"]), []).append(
                [float(row["t"]), float(row["x"]), float(row["y"]), float(row["z"])]
            )
    if not rows_by_uav:
        raise FlightLogError("flight log is empty")

    series = {}
    gaps: list[tuple[int, int]] = []
    for uav_id, rows in rows_by_uav.items():
        arr = np.asarray(rows)
        dts = np.diff(arr[:, 0])
        if len(dts) and dts.min() <= 0:
            bad = int(np.argmin(dts))
            raise FlightLogError(f"uav {uav_id}: non-monotone timestamps at row {bad + 1}")
        if len(dts):
            median = float(np.median(dts))
            for i, dt in enumerate(dts):
                if dt > 2.0 * median:
                    gaps.append((uav_id, i + 1))
        series[uav_id] = arr
    return FlightLog(uav_series=series, gaps=gaps)


def generate_synthetic_flightlog(path, seed: int = 0, n_cities: int = 6, n_uavs: int = 2, dt: float = 0.2) -> None:
    """Write a synthetic two-UAV indoor mission log for pipeline tests.

    Cities sit on a circle around a central depot; each UAV flies its share
    in order with speed jitter and positional noise, bobbing in z.
    """
    rng = np.random.default_rng(seed)
    depot = np.array([0.0, 0.0, 1.5])
    radius = 8.0
    angles = np.linspace(0.0, 2 * math.pi, n_cities, endpoint=False)
    cities = [depot + np.array([radius * math.cos(a), radius * math.sin(a), rng.uniform(-0.3, 0.3)]) for a in angles]

    rows = []
    per_uav = [list(range(q, n_cities, n_uavs)) for q in range(n_uavs)]
    for uav_id, assigned in enumerate(per_uav):
        t = 0.0
        pos = depot.copy()
        waypoints = [cities[i] for i in assigned] + [depot]
        rows.append([t, *pos, uav_id])
        for wp in waypoints:
            while np.linalg.norm(wp - pos) > 0.3:
                direction = (wp - pos) / np.linalg.norm(wp - pos)
                speed = rng.uniform(0.8, 1.4)
                pos = pos + direction * speed * dt + rng.normal(0.0, 0.02, size=3)
                pos[2] = 1.5 + 0.2 * math.sin(t) + rng.normal(0.0, 0.01)
                t += dt
                rows.append([t, *pos, uav_id])

    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "x", "y", "z", "uav_id"])
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def velocities_from_log(log: FlightLog) -> dict[int, np.ndarray]:
    """Central-difference 3-D velocities per UAV (one-sided at the ends)."""
    out = {}
    for uav_id, arr in log.uav_series.items():
        t, xyz = arr[:, 0], arr[:, 1:4]
        if len(t) < 2:
            raise FlightLogError(f"uav {uav_id}: need at least 2 samples")
        vel = np.gradient(xyz, t, axis=0)
        out[uav_id] = vel
    return out


@dataclass(frozen=True)
class GNGConfig:
    max_nodes: int = 10
    eps_b: float = 0.05  # winner adaptation rate
    eps_n: float = 0.006  # neighbor adaptation rate
    lambda_insert: int = 100
    a_max: int = 50
    alpha_split: float = 0.5
    d_decay: float = 0.995
    epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.eps_b < 1 and 0 < self.eps_n < 1):
            raise ValueError("adaptation rates must lie in (0, 1)")
        if self.max_nodes < 2:
            raise ValueError("max_nodes must be >= 2")


@dataclass
class GNGCodebook:
    nodes: np.ndarray  # (k, d)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def assign(self, vectors: np.ndarray) -> np.ndarray:
        """Nearest-node labels; ties go to the lowest node id."""
        v = np.atleast_2d(np.asarray(vectors, dtype=float))
        dists = np.linalg.norm(v[:, None, :] - self.nodes[None, :, :], axis=2)
        return dists.argmin(axis=1)

    def to_dict(self) -> dict:
        return {"nodes": self.nodes.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "GNGCodebook":
        return cls(nodes=np.asarray(payload["nodes"], dtype=float))


def gng_fit(velocities: np.ndarray, cfg: GNGConfig) -> GNGCodebook:
    """Grow a gas of at most max_nodes prototype vectors over the samples.

    Standard incremental scheme: move the winner and its topological
    neighbors toward each input, age and prune edges, insert a node at the
    highest-error region every lambda_insert inputs, and decay all errors.
    Deterministic for a given seed.
    """
    data = np.asarray(velocities, dtype=float)
    if data.ndim != 2 or len(data) < 2:
        raise ValueError("need at least 2 velocity samples")
    if len(np.unique(data, axis=0)) < 2:
        raise ValueError("need at least 2 distinct velocity samples")

    rng = np.random.default_rng(cfg.seed)
    first = rng.choice(len(data), size=2, replace=False)
    nodes: list[np.ndarray] = [data[first[0]].copy(), data[first[1]].copy()]
    errors: list[float] = [0.0, 0.0]
    edges: dict[tuple[int, int], int] = {(0, 1): 0}  # (a < b) -> age

    def neighbors(i: int) -> list[int]:
        out = []
        for a, b in edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return out

    seen = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for idx in order:
            x = data[idx]
            seen += 1
            dists = np.linalg.norm(np.asarray(nodes) - x, axis=1)
            ranked = np.argsort(dists, kind="stable")
            s1, s2 = int(ranked[0]), int(ranked[1])

            errors[s1] += float(dists[s1] ** 2)
            nodes[s1] = nodes[s1] + cfg.eps_b * (x - nodes[s1])
            for nb in neighbors(s1):
                nodes[nb] = nodes[nb] + cfg.eps_n * (x - nodes[nb])
                key = (min(s1, nb), max(s1, nb))
                edges[key] += 1

            edges[(min(s1, s2), max(s1, s2))] = 0

            for key in [k for k, age in edges.items() if age > cfg.a_max]:
                del edges[key]
            connected = {i for e in edges for i in e}
            isolated = [i for i in range(len(nodes)) if i not in connected]
            for i in sorted(isolated, reverse=True):
                if len(nodes) <= 2:
                    break
                nodes.pop(i)
                errors.pop(i)
                edges = {
                    (a - (a > i), b - (b > i)): age for (a, b), age in edges.items() if i not in (a, b)
                }

            if seen % cfg.lambda_insert == 0 and len(nodes) < cfg.max_nodes:
                worst = int(np.argmax(errors))
                nbs = neighbors(worst)
                if nbs:
                    worst_nb = max(nbs, key=lambda i: (errors[i], -i))
                    new = 0.5 * (nodes[worst] + nodes[worst_nb])
                    nodes.append(new)
                    errors[worst] *= cfg.alpha_split
                    errors[worst_nb] *= cfg.alpha_split
                    errors.append(errors[worst])
                    new_id = len(nodes) - 1
                    edges.pop((min(worst, worst_nb), max(worst, worst_nb)), None)
                    edges[(min(worst, new_id), max(worst, new_id))] = 0
                    edges[(min(worst_nb, new_id), max(worst_nb, new_id))] = 0

            errors = [e * cfg.d_decay for e in errors]

    return GNGCodebook(nodes=np.asarray(nodes))


@dataclass
class ClusterSequence:
    labels: np.ndarray  # (n,) int node labels in time order
    uav_id: int = 0


def label_sequence(log: FlightLog, codebook: GNGCodebook) -> list[ClusterSequence]:
    """Nearest-node label per velocity sample, one sequence per UAV."""
    out = []
    for uav_id, vel in sorted(velocities_from_log(log).items()):
        out.append(ClusterSequence(labels=codebook.assign(vel), uav_id=uav_id))
    return out


def combined_transition(sequences: list[ClusterSequence], alpha: float, n_labels: int | None = None) -> TransitionMatrix:
    """Bigram label counts pooled over all sequences, row-smoothed."""
    if not sequences:
        raise ValueError("need at least one sequence")
    if n_labels is None:
        n_labels = int(max(seq.labels.max() for seq in sequences)) + 1
    keys = [str(i) for i in range(n_labels)]
    pair_counts: dict[tuple[str, str], int] = {}
    for seq in sequences:
        for a, b in zip(seq.labels[:-1], seq.labels[1:]):
            key = (str(int(a)), str(int(b)))
            pair_counts[key] = pair_counts.get(key, 0) + 1
    return estimate_transition(pair_counts, alpha, from_keys=keys, to_keys=keys, from_level="Mot", to_level="Mot")


def predict_and_correct(
    sequence: ClusterSequence,
    transition: TransitionMatrix,
    codebook: GNGCodebook,
    beta: float = 4.0,
) -> dict:
    """Step through a label sequence predicting and correcting each next label.

    Prediction is the argmax of the transition row of the current label.
    Correction multiplies that row by an observation likelihood, a softmax
    over negative node distances to the measured label's node, and takes the
    posterior argmax. Unseen labels fall back to a uniform row and are
    flagged. Returns predicted/corrected labels and both error traces.
    """
    labels = sequence.labels
    n = len(labels)
    keys = transition.col_keys
    k = len(keys)
    node_dist = np.linalg.norm(codebook.nodes[:, None, :] - codebook.nodes[None, :, :], axis=2)

    predicted = np.zeros(n - 1, dtype=int)
    corrected = np.zeros(n - 1, dtype=int)
    fallbacks = 0
    for i in range(n - 1):
        current = str(int(labels[i]))
        row, fell_back = transition.row(current)
        fallbacks += int(fell_back)
        predicted[i] = int(np.argmax(row))

        measured = int(labels[i + 1])
        logits = -beta * node_dist[:k, measured]
        logits -= logits.max()
        lik = np.exp(logits)
        lik /= lik.sum()
        post = row * lik
        total = post.sum()
        post = post / total if total > 0 else np.full(k, 1.0 / k)
        corrected[i] = int(np.argmax(post))

    observed = labels[1:]
    return {
        "predicted": predicted,
        "corrected": corrected,
        "predicted_errors": (predicted != observed).astype(int),
        "corrected_errors": (corrected != observed).astype(int),
        "predicted_error_rate": float(np.mean(predicted != observed)),
        "corrected_error_rate": float(np.mean(corrected != observed)),
        "fallbacks": fallbacks,
    }
