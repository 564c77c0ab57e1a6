"""Probabilistic structure over the symbolic dictionaries.

Holds smoothed reference distributions per level, the mission-to-route and
route-to-motion transition matrices, a city-count-to-swarm-size table, and a
mission reference conditioned on the city-count bin. All estimates use
additive smoothing with constant alpha so every stored symbol keeps strictly
positive probability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .symbolic import Dictionaries, LetterCodebook, QuantizerConfig, SymbolicTriplet, word_from_key

__all__ = [
    "ReferenceDistribution",
    "TransitionMatrix",
    "SwarmSizeTable",
    "SwarmSizeDecision",
    "WorldModel",
    "ModelFormatError",
    "estimate_reference",
    "estimate_transition",
    "joint_probability",
    "infer_swarm_size",
    "learn_world_model",
    "save_model",
    "load_model",
]

MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a model file is malformed or has the wrong version."""


@dataclass
class ReferenceDistribution:
    level: str  # Msn | Rte | Mot
    probs: dict[str, float]  # word key -> probability
    alpha: float
    total_count: float

    def __post_init__(self):
        total = sum(self.probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"reference for {self.level} sums to {total}")

    def probability(self, key: str) -> float:
        """Probability of a word key; unseen keys get the smoothing floor."""
        return self.probs.get(key, self.unseen_floor())

    def unseen_floor(self) -> float:
        if self.alpha <= 0:
            return 0.0
        k = len(self.probs)
        return self.alpha / (self.total_count + self.alpha * (k + 1))


def estimate_reference(counts: dict, alpha: float, level: str = "Msn") -> ReferenceDistribution:
    """Additively smoothed frequencies: (n_i + alpha) / (sum_r n_r + alpha*K)."""
    if not counts:
        raise ValueError("no symbols to estimate from")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    total = float(sum(counts.values()))
    k = len(counts)
    if alpha == 0 and total == 0:
        raise ValueError("all counts are zero and alpha is 0")
    denom = total + alpha * k
    keys = [c if isinstance(c, str) else c.key() for c in counts]
    probs = {key: (float(value) + alpha) / denom for key, value in zip(keys, counts.values())}
    return ReferenceDistribution(level=level, probs=probs, alpha=alpha, total_count=total)


@dataclass
class TransitionMatrix:
    from_level: str
    to_level: str
    col_keys: list[str]
    rows: dict[str, np.ndarray]  # from-key -> probability vector over col_keys
    alpha: float
    row_totals: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for key, row in self.rows.items():
            if abs(float(row.sum()) - 1.0) > 1e-9:
                raise ValueError(f"row {key} sums to {row.sum()}")

    def row(self, from_key: str) -> tuple[np.ndarray, bool]:
        """Probability row for a from-symbol; unseen rows fall back to uniform."""
        if from_key in self.rows:
            return self.rows[from_key], False
        k = len(self.col_keys)
        return np.full(k, 1.0 / k), True

    def probability(self, from_key: str, to_key: str) -> float:
        row, _ = self.row(from_key)
        if to_key in self.col_keys:
            return float(row[self.col_keys.index(to_key)])
        return self.row_floor(from_key)

    def row_floor(self, from_key: str) -> float:
        """Smoothing floor for a to-symbol never seen with this from-symbol."""
        if self.alpha <= 0:
            return 0.0
        total = self.row_totals.get(from_key, 0.0)
        return self.alpha / (total + self.alpha * (len(self.col_keys) + 1))

    def row_reference(self, from_key: str) -> ReferenceDistribution:
        """The conditional distribution as a reference for belief updates."""
        row, _ = self.row(from_key)
        return ReferenceDistribution(
            level=self.to_level,
            probs={key: float(p) for key, p in zip(self.col_keys, row)},
            alpha=self.alpha,
            total_count=self.row_totals.get(from_key, 0.0),
        )


def estimate_transition(
    pair_counts: dict,
    alpha: float,
    from_keys: list[str] | None = None,
    to_keys: list[str] | None = None,
    from_level: str = "Msn",
    to_level: str = "Rte",
) -> TransitionMatrix:
    """Row-wise smoothed conditional frequencies from (from, to) pair counts."""
    norm_counts: dict[tuple[str, str], float] = {}
    for (a, b), value in pair_counts.items():
        ka = a if isinstance(a, str) else a.key()
        kb = b if isinstance(b, str) else b.key()
        norm_counts[(ka, kb)] = norm_counts.get((ka, kb), 0.0) + float(value)

    if from_keys is None:
        from_keys = sorted({a for a, _ in norm_counts})
    if to_keys is None:
        to_keys = sorted({b for _, b in norm_counts})
    if not from_keys or not to_keys:
        raise ValueError("empty symbol sets")

    rows: dict[str, np.ndarray] = {}
    row_totals: dict[str, float] = {}
    k = len(to_keys)
    col_index = {key: j for j, key in enumerate(to_keys)}
    for a in from_keys:
        counts = np.zeros(k)
        for (xa, xb), value in norm_counts.items():
            if xa == a:
                counts[col_index[xb]] += value
        total = float(counts.sum())
        if total == 0 and alpha == 0:
            raise ValueError(f"row {a} has zero counts and alpha is 0")
        rows[a] = (counts + alpha) / (total + alpha * k)
        row_totals[a] = total
    return TransitionMatrix(
        from_level=from_level, to_level=to_level, col_keys=list(to_keys), rows=rows, alpha=alpha, row_totals=row_totals
    )


@dataclass
class SwarmSizeTable:
    bin_width: int
    rows: dict[int, dict[int, float]]  # city-count bin -> {uav count: probability}

    def __post_init__(self):
        for b, row in self.rows.items():
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"swarm-size row {b} sums to {total}")

    def bin_of(self, n_cities: int) -> int:
        return n_cities // self.bin_width


@dataclass(frozen=True)
class SwarmSizeDecision:
    q: int
    requested_bin: int
    used_bin: int

    @property
    def fallback(self) -> bool:
        return self.requested_bin != self.used_bin


def infer_swarm_size(model: "WorldModel", n_cities: int) -> SwarmSizeDecision:
    """Most probable UAV count for the city-count bin; ties pick the smaller Q.

    A never-observed bin falls back to the nearest observed bin and the
    decision records that it did.
    """
    table = model.swarm_table
    if not table.rows:
        raise ValueError("swarm-size table is empty")
    requested = table.bin_of(n_cities)
    if requested in table.rows:
        used = requested
    else:
        used = min(table.rows, key=lambda b: (abs(b - requested), b))
    row = table.rows[used]
    best_q = min(row, key=lambda q: (-row[q], q))
    return SwarmSizeDecision(q=best_q, requested_bin=requested, used_bin=used)


@dataclass
class WorldModel:
    dictionaries: Dictionaries
    mission_ref: ReferenceDistribution
    route_ref: ReferenceDistribution
    motion_ref: ReferenceDistribution
    t_mission_route: TransitionMatrix
    t_route_motion: TransitionMatrix
    swarm_table: SwarmSizeTable
    context_mission: dict[int, ReferenceDistribution]  # city-count bin -> mission reference
    route_motion_counts: dict[tuple[str, str], int]
    quantizer: QuantizerConfig
    alpha: float
    meta: dict = field(default_factory=dict)

    def motion_words_for_route(self, route_key: str) -> list[str]:
        """Motion words co-observed with this route word (raw counts > 0)."""
        return sorted({mot for (rte, mot), n in self.route_motion_counts.items() if rte == route_key and n > 0})


def joint_probability(model: WorldModel, mission_key: str, route_key: str, motion_key: str) -> float:
    """p_ref(mission) * T(mission->route) * T(route->motion) for known symbols."""
    for level, key, known in (
        ("mission", mission_key, mission_key in model.mission_ref.probs),
        ("route", route_key, route_key in model.t_mission_route.col_keys),
        ("motion", motion_key, motion_key in model.t_route_motion.col_keys),
    ):
        if not known:
            raise KeyError(f"unknown {level} symbol {key!r}")
    p = model.mission_ref.probs[mission_key]
    row, _ = model.t_mission_route.row(mission_key)
    p *= float(row[model.t_mission_route.col_keys.index(route_key)])
    row, _ = model.t_route_motion.row(route_key)
    p *= float(row[model.t_route_motion.col_keys.index(motion_key)])
    return p


def learn_world_model(
    triplets: list[SymbolicTriplet],
    codebook: LetterCodebook,
    alpha: float = 1.0,
    swarm_bin_width: int = 10,
    quantizer: QuantizerConfig | None = None,
    meta: dict | None = None,
) -> WorldModel:
    """Estimate all distributions of the world model from symbolic triplets."""
    from .symbolic import build_dictionaries

    quantizer = quantizer or QuantizerConfig()
    dictionaries = build_dictionaries(triplets, codebook)

    mission_counts = {w.key(): n for w, n in sorted(dictionaries.mission.items(), key=lambda kv: kv[0].key())}
    route_counts = {w.key(): n for w, n in sorted(dictionaries.route.items(), key=lambda kv: kv[0].key())}
    motion_counts = {w.key(): n for w, n in sorted(dictionaries.motion.items(), key=lambda kv: kv[0].key())}

    mr_pairs: dict[tuple[str, str], int] = {}
    rm_pairs: dict[tuple[str, str], int] = {}
    swarm_counts: dict[int, dict[int, int]] = {}
    context_counts: dict[int, dict[str, int]] = {}
    for trip in triplets:
        for m_word, r_word, o_word in zip(trip.mission, trip.route, trip.motion):
            mr = (m_word.key(), r_word.key())
            rm = (r_word.key(), o_word.key())
            mr_pairs[mr] = mr_pairs.get(mr, 0) + 1
            rm_pairs[rm] = rm_pairs.get(rm, 0) + 1
            bin_id = trip.n_cities // swarm_bin_width
            context_counts.setdefault(bin_id, {})
            context_counts[bin_id][m_word.key()] = context_counts[bin_id].get(m_word.key(), 0) + 1
        bin_id = trip.n_cities // swarm_bin_width
        swarm_counts.setdefault(bin_id, {})
        swarm_counts[bin_id][trip.uav_count] = swarm_counts[bin_id].get(trip.uav_count, 0) + 1

    swarm_rows = {}
    for bin_id, row in swarm_counts.items():
        total = sum(row.values())
        swarm_rows[bin_id] = {q: n / total for q, n in sorted(row.items())}

    context_mission = {
        bin_id: estimate_reference(
            {key: counts.get(key, 0) for key in mission_counts}, alpha, level="Msn"
        )
        for bin_id, counts in sorted(context_counts.items())
    }

    return WorldModel(
        dictionaries=dictionaries,
        mission_ref=estimate_reference(mission_counts, alpha, level="Msn"),
        route_ref=estimate_reference(route_counts, alpha, level="Rte"),
        motion_ref=estimate_reference(motion_counts, alpha, level="Mot"),
        t_mission_route=estimate_transition(
            mr_pairs, alpha, from_keys=list(mission_counts), to_keys=list(route_counts), from_level="Msn", to_level="Rte"
        ),
        t_route_motion=estimate_transition(
            rm_pairs, alpha, from_keys=list(route_counts), to_keys=list(motion_counts), from_level="Rte", to_level="Mot"
        ),
        swarm_table=SwarmSizeTable(bin_width=swarm_bin_width, rows=swarm_rows),
        context_mission=context_mission,
        route_motion_counts=rm_pairs,
        quantizer=quantizer,
        alpha=alpha,
        meta=meta or {},
    )


def _reference_to_dict(ref: ReferenceDistribution) -> dict:
    return {
        "level": ref.level,
        "probs": {k: ref.probs[k] for k in sorted(ref.probs)},
        "alpha": ref.alpha,
        "total_count": ref.total_count,
    }


def _reference_from_dict(payload: dict) -> ReferenceDistribution:
    return ReferenceDistribution(
        level=payload["level"],
        probs={k: float(v) for k, v in payload["probs"].items()},
        alpha=float(payload["alpha"]),
        total_count=float(payload["total_count"]),
    )


def _transition_to_dict(tm: TransitionMatrix) -> dict:
    return {
        "from_level": tm.from_level,
        "to_level": tm.to_level,
        "col_keys": tm.col_keys,
        "alpha": tm.alpha,
        "rows": {k: tm.rows[k].tolist() for k in sorted(tm.rows)},
        "row_totals": {k: tm.row_totals[k] for k in sorted(tm.row_totals)},
    }


def _transition_from_dict(payload: dict) -> TransitionMatrix:
    return TransitionMatrix(
        from_level=payload["from_level"],
        to_level=payload["to_level"],
        col_keys=list(payload["col_keys"]),
        rows={k: np.asarray(v, dtype=float) for k, v in payload["rows"].items()},
        alpha=float(payload["alpha"]),
        row_totals={k: float(v) for k, v in payload["row_totals"].items()},
    )


def save_model(model: WorldModel, path) -> None:
    payload = {
        "version": MODEL_VERSION,
        "alpha": model.alpha,
        "quantizer": {
            "share_bins": model.quantizer.share_bins,
            "sector_bins": model.quantizer.sector_bins,
            "ring_bins": model.quantizer.ring_bins,
            "nn_bins": model.quantizer.nn_bins,
        },
        "codebook": model.dictionaries.codebook.to_dict() if model.dictionaries.codebook else None,
        "mission_counts": {w.key(): n for w, n in sorted(model.dictionaries.mission.items(), key=lambda kv: kv[0].key())},
        "route_counts": {w.key(): n for w, n in sorted(model.dictionaries.route.items(), key=lambda kv: kv[0].key())},
        "motion_counts": {w.key(): n for w, n in sorted(model.dictionaries.motion.items(), key=lambda kv: kv[0].key())},
        "mission_ref": _reference_to_dict(model.mission_ref),
        "route_ref": _reference_to_dict(model.route_ref),
        "motion_ref": _reference_to_dict(model.motion_ref),
        "t_mission_route": _transition_to_dict(model.t_mission_route),
        "t_route_motion": _transition_to_dict(model.t_route_motion),
        "swarm_table": {
            "bin_width": model.swarm_table.bin_width,
            "rows": {str(b): {str(q): p for q, p in row.items()} for b, row in sorted(model.swarm_table.rows.items())},
        },
        "context_mission": {str(b): _reference_to_dict(ref) for b, ref in sorted(model.context_mission.items())},
        "route_motion_counts": {f"{a}|{b}": n for (a, b), n in sorted(model.route_motion_counts.items())},
        "meta": model.meta,
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


REQUIRED_MODEL_FIELDS = (
    "version",
    "alpha",
    "quantizer",
    "codebook",
    "mission_counts",
    "route_counts",
    "motion_counts",
    "mission_ref",
    "route_ref",
    "motion_ref",
    "t_mission_route",
    "t_route_motion",
    "swarm_table",
    "context_mission",
    "route_motion_counts",
)


def load_model(path) -> WorldModel:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"invalid model file {path}: {exc}") from exc
    for name in REQUIRED_MODEL_FIELDS:
        if name not in payload:
            raise ModelFormatError(f"model file missing field {name!r}")
    if payload["version"] != MODEL_VERSION:
        raise ModelFormatError(f"model version {payload['version']} unsupported (expected {MODEL_VERSION})")

    codebook = LetterCodebook.from_dict(payload["codebook"]) if payload["codebook"] else None
    dictionaries = Dictionaries(
        mission={word_from_key(k): int(n) for k, n in payload["mission_counts"].items()},
        route={word_from_key(k): int(n) for k, n in payload["route_counts"].items()},
        motion={word_from_key(k): int(n) for k, n in payload["motion_counts"].items()},
        codebook=codebook,
    )
    q = payload["quantizer"]
    return WorldModel(
        dictionaries=dictionaries,
        mission_ref=_reference_from_dict(payload["mission_ref"]),
        route_ref=_reference_from_dict(payload["route_ref"]),
        motion_ref=_reference_from_dict(payload["motion_ref"]),
        t_mission_route=_transition_from_dict(payload["t_mission_route"]),
        t_route_motion=_transition_from_dict(payload["t_route_motion"]),
        swarm_table=SwarmSizeTable(
            bin_width=int(payload["swarm_table"]["bin_width"]),
            rows={
                int(b): {int(qk): float(p) for qk, p in row.items()}
                for b, row in payload["swarm_table"]["rows"].items()
            },
        ),
        context_mission={int(b): _reference_from_dict(ref) for b, ref in payload["context_mission"].items()},
        route_motion_counts={
            (k.split("|", 1)[0], k.split("|", 1)[1]): int(n) for k, n in payload["route_motion_counts"].items()
        },
        quantizer=QuantizerConfig(
            share_bins=int(q["share_bins"]),
            sector_bins=int(q["sector_bins"]),
            ring_bins=int(q["ring_bins"]),
            nn_bins=int(q["nn_bins"]),
        ),
        alpha=float(payload["alpha"]),
        meta=dict(payload.get("meta", {})),
    )
