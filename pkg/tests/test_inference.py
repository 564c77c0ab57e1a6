import itertools
import math

import numpy as np
import pytest

from swarmwm.inference import (
    Belief,
    InferenceConfig,
    Observation,
    abnormality,
    assign_new_city,
    decide_mission,
    decide_motion,
    decide_route,
    insert_city,
    likelihood,
    mission_cost,
    posterior,
    score_allocations,
    score_orders,
    total_abnormality,
)
from swarmwm.potential_field import FieldConfig
from swarmwm.scenario import Obstacle
from swarmwm.symbolic import (
    LetterCodebook,
    MissionWord,
    MotionWord,
    QuantizerConfig,
    RouteWord,
    SymbolicTriplet,
    quantize_mission,
    quantize_route,
)
from swarmwm.world_model import learn_world_model

FIELD = FieldConfig()
CFG = InferenceConfig()


# ---------------------------------------------------------------------------
# probabilistic primitives
# ---------------------------------------------------------------------------


def test_likelihood_hand_values():
    probs = likelihood({"A": 0.0, "B": math.log(3.0)}, beta=1.0)
    assert probs["A"] == pytest.approx(0.75)
    assert probs["B"] == pytest.approx(0.25)


def test_likelihood_equal_costs_uniform():
    probs = likelihood({"a": 2.0, "b": 2.0, "c": 2.0}, beta=1.5)
    assert all(p == pytest.approx(1.0 / 3.0) for p in probs.values())


def test_likelihood_shift_invariant():
    base = likelihood({"a": 0.0, "b": 1.0, "c": 3.0}, beta=0.7)
    shifted = likelihood({"a": 100.0, "b": 101.0, "c": 103.0}, beta=0.7)
    for key in base:
        assert shifted[key] == pytest.approx(base[key], abs=1e-12)


def test_posterior_flat_likelihood_returns_reference():
    ref = {"a": 2.0 / 3.0, "b": 1.0 / 3.0}
    bel = posterior({"a": 0.5, "b": 0.5}, ref)
    assert bel.probs["a"] == pytest.approx(ref["a"])


def test_posterior_flat_reference_returns_likelihood():
    like = {"a": 0.75, "b": 0.25}
    bel = posterior(like, {"a": 0.5, "b": 0.5})
    assert bel.probs["a"] == pytest.approx(0.75)


def test_posterior_hand_product():
    bel = posterior({"a": 0.75, "b": 0.25}, {"a": 2.0 / 3.0, "b": 1.0 / 3.0})
    assert bel.probs["a"] == pytest.approx(0.857, abs=1e-3)
    assert bel.probs["b"] == pytest.approx(0.143, abs=1e-3)


def test_posterior_disjoint_support_errors():
    with pytest.raises(ValueError, match="support"):
        posterior({"a": 1.0}, {"b": 1.0})
    with pytest.raises(ValueError, match="disjoint"):
        posterior({"a": 1.0, "b": 0.0}, {"a": 0.0, "b": 1.0})


def test_abnormality_zero_at_reference():
    ref = {"a": 0.3, "b": 0.7}
    bel = Belief(level="Msn", probs=dict(ref))
    assert abnormality(bel, ref) == pytest.approx(0.0, abs=1e-15)


def test_abnormality_hand_value_ln2():
    bel = Belief(level="Msn", probs={"a": 1.0, "b": 0.0})
    assert abnormality(bel, {"a": 0.5, "b": 0.5}) == pytest.approx(math.log(2.0), abs=1e-12)


def test_abnormality_matches_summation_oracle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        k = int(rng.integers(2, 8))
        q = rng.dirichlet(np.ones(k))
        p = rng.dirichlet(np.ones(k)) + 1e-9
        p /= p.sum()
        keys = [f"w{i}" for i in range(k)]
        bel = Belief(level="Mot", probs=dict(zip(keys, q)))
        ref = dict(zip(keys, p))
        oracle = float(sum(qi * math.log(qi / pi) for qi, pi in zip(q, p) if qi > 0))
        delta = abnormality(bel, ref)
        assert delta >= 0.0
        assert delta == pytest.approx(oracle, abs=1e-12)


def test_total_abnormality():
    assert total_abnormality(0.0, 0.0, 0.0, CFG) == 0.0
    only_mission = InferenceConfig(lambda_mission=1.0, lambda_route=0.0, lambda_motion=0.0)
    assert total_abnormality(0.4, 9.0, 9.0, only_mission) == pytest.approx(0.4)
    assert total_abnormality(0.1, 0.2, 0.3, CFG) == pytest.approx(0.6)


# ---------------------------------------------------------------------------
# fixture world model
# ---------------------------------------------------------------------------

AREA = (1000.0, 1000.0)
DEPOT = (500.0, 500.0)
QCFG = QuantizerConfig()


def _letters_codebook():
    # letter 0: fast straight target-seeking; letter 1: slower avoidance
    centroids = np.array(
        [
            [9.5, 0.0, 0.0, 0.0, 500.0, 500.0],
            [6.0, 0.8, 0.08, 0.7, 15.0, 40.0],
        ]
    )
    return LetterCodebook(means=np.zeros(6), stds=np.ones(6), centroids=centroids)


def _triplet(m, r, o, n_cities=8, uav_count=2):
    return SymbolicTriplet(mission=[m], route=[r], motion=[o], n_cities=n_cities, uav_count=uav_count)


def fixture_model():
    """Hand-shaped training statistics for the decision tests.

    East and west cluster words are both typical missions; sweeps with high
    nearest-neighbor consistency are typical routes; the cruise letter
    dominates motion with avoidance present but rarer.
    """
    east = MissionWord(2, 0, 1)
    west = MissionWord(2, 4, 1)
    whole = MissionWord(4, 0, 0)
    r_east = RouteWord(east, "mixed", 3)
    r_west = RouteWord(west, "mixed", 3)
    r_whole = RouteWord(whole, "mixed", 3)
    cruise, avoid, mixed = MotionWord((0,)), MotionWord((1,)), MotionWord((0, 1))

    triplets = []
    for _ in range(9):
        triplets.append(_triplet(east, r_east, cruise))
        triplets.append(_triplet(west, r_west, cruise))
    for _ in range(3):
        triplets.append(_triplet(whole, r_whole, cruise, n_cities=4, uav_count=1))
    # motion diversity under every route word, 3:2:2 cruise:avoid:mixed
    for r_word in (r_east, r_west, r_whole):
        parent = r_word.parent
        for _ in range(6):
            triplets.append(_triplet(parent, r_word, avoid))
            triplets.append(_triplet(parent, r_word, mixed))
    return learn_world_model(triplets, _letters_codebook(), alpha=1.0, quantizer=QCFG)


MODEL = fixture_model()


def _obs(cities, uav_positions, predicted=None, obstacles=(), t=0.0):
    return Observation(
        t=t,
        cities=cities,
        uav_positions=uav_positions,
        uav_predicted=predicted or uav_positions,
        obstacles=tuple(obstacles),
        depot=DEPOT,
        area=AREA,
    )


def _cluster_cities():
    east = [(780, 480), (820, 480), (780, 520), (820, 520)]
    west = [(180, 480), (220, 480), (180, 520), (220, 520)]
    return {i + 1: xy for i, xy in enumerate(east + west)}


# ---------------------------------------------------------------------------
# mission level
# ---------------------------------------------------------------------------


def test_decide_mission_single_uav_trivial():
    cities = {1: (600.0, 500.0), 2: (400.0, 500.0)}
    decision = decide_mission(_obs(cities, [DEPOT]), MODEL, CFG)
    assert decision.chosen.action == (frozenset({1, 2}),)
    assert decision.n_candidates == 1


def test_decide_mission_separates_clusters_and_matches_enumeration():
    cities = _cluster_cities()
    obs = _obs(cities, [DEPOT, DEPOT])
    decision = decide_mission(obs, MODEL, CFG)
    chosen = set(frozenset(s) for s in decision.chosen.action)
    assert chosen == {frozenset({1, 2, 3, 4}), frozenset({5, 6, 7, 8})}

    # exhaustive oracle: every nonempty 2-partition scored jointly
    ids = sorted(cities)
    seen = set()
    partitions = []
    for labels in itertools.product(range(2), repeat=len(ids)):
        subsets = [frozenset(c for c, lab in zip(ids, labels) if lab == g) for g in range(2)]
        if any(not s for s in subsets):
            continue
        alloc = tuple(sorted(subsets, key=min))
        if alloc not in seen:
            seen.add(alloc)
            partitions.append(alloc)
    oracle = score_allocations(partitions, obs, MODEL, CFG)
    assert set(oracle.chosen.action) == chosen


def test_decide_mission_chosen_attains_min_delta():
    decision = decide_mission(_obs(_cluster_cities(), [DEPOT, DEPOT]), MODEL, CFG)
    best = min(s.delta for s in decision.candidates)
    assert decision.chosen.delta == pytest.approx(best)


def test_mission_selection_invariant_to_candidate_cost_shift():
    cities = _cluster_cities()
    obs = _obs(cities, [DEPOT, DEPOT])
    base = decide_mission(obs, MODEL, CFG)

    # rescore the same pool with a constant added to every candidate cost
    pool = [s.action for s in base.candidates]
    entries = []
    from swarmwm.inference import _mission_words_of, score_candidates, _allocation_key

    for alloc in pool:
        words = _mission_words_of(alloc, cities, len(cities), DEPOT, AREA, MODEL.quantizer)
        cost = mission_cost(alloc, cities, DEPOT, CFG) + 1234.5
        entries.append((alloc, _allocation_key(alloc), words, cost))
    shifted = score_candidates(
        entries, MODEL.mission_ref, CFG.beta_mission, CFG.concentration, level="Msn",
    )
    assert shifted.chosen.action == base.chosen.action
    for a, b in zip(base.candidates, shifted.candidates):
        assert b.delta == pytest.approx(a.delta, abs=1e-12)


def test_assign_new_city_single_uav():
    current = (frozenset({1, 2}),)
    cities = {1: (600.0, 500.0), 2: (650.0, 500.0), 3: (700.0, 500.0)}
    q_star, decision = assign_new_city(_obs(cities, [DEPOT]), MODEL, current, 3, CFG)
    assert q_star == 0
    assert decision.n_candidates == 1


def test_assign_new_city_prefers_matching_cluster():
    cities = _cluster_cities()
    current = (frozenset({1, 2, 3, 4}), frozenset({5, 6, 7, 8}))
    cities[9] = (205.0, 495.0)  # inside the west cluster -> UAV 1
    obs = _obs(cities, [DEPOT, DEPOT])
    q_star, decision = assign_new_city(obs, MODEL, current, 9, CFG)
    assert q_star == 1
    assert decision.n_candidates == 2
    # enumeration oracle: both candidates scored identically by construction
    best = min(decision.candidates, key=lambda s: (s.delta, s.cost, s.action_key))
    assert best.action == 1


def test_assign_new_city_label_equivariance():
    cities = _cluster_cities()
    cities[9] = (205.0, 495.0)
    obs = _obs(cities, [DEPOT, DEPOT])
    east, west = frozenset({1, 2, 3, 4}), frozenset({5, 6, 7, 8})
    q_a, _ = assign_new_city(obs, MODEL, (east, west), 9, CFG)
    q_b, _ = assign_new_city(obs, MODEL, (west, east), 9, CFG)
    assert q_a == 1 and q_b == 0


def test_assign_new_city_rejects_assigned():
    with pytest.raises(ValueError):
        assign_new_city(_obs({1: (600, 500)}, [DEPOT]), MODEL, (frozenset({1}),), 1, CFG)


# ---------------------------------------------------------------------------
# route level
# ---------------------------------------------------------------------------


def _collinear_cities():
    return {1: (520.0, 500.0), 2: (540.0, 500.0), 3: (560.0, 500.0), 4: (580.0, 500.0)}


def test_decide_route_single_city():
    cities = {1: (600.0, 500.0)}
    parent = quantize_mission(np.array([[600.0, 500.0]]), 1, DEPOT, AREA, QCFG)
    decision = decide_route([1], parent, _obs(cities, [DEPOT]), MODEL, CFG)
    assert decision.chosen.action == [1]
    assert decision.n_candidates == 1


def test_decide_route_collinear_sweep_matches_enumeration():
    cities = _collinear_cities()
    obs = _obs(cities, [DEPOT])
    pts = np.asarray([cities[c] for c in sorted(cities)])
    parent = quantize_mission(pts, 4, DEPOT, AREA, QCFG)
    decision = decide_route([1, 2, 3, 4], parent, obs, MODEL, CFG)
    assert decision.chosen.action == [1, 2, 3, 4]
    assert decision.n_candidates == 24

    # exhaustive oracle: every permutation through the same scorer
    orders = [list(p) for p in itertools.permutations([1, 2, 3, 4])]
    oracle = score_orders(orders, parent, cities, DEPOT, MODEL, CFG)
    assert oracle.chosen.action == decision.chosen.action


def test_insert_city_on_segment_zero_added_length():
    cities = {1: (520.0, 480.0), 2: (540.0, 520.0), 3: (560.0, 480.0), 4: (550.0, 500.0)}
    obs = _obs(cities, [DEPOT])
    pts = np.asarray([cities[c] for c in sorted(cities)])
    parent = quantize_mission(pts, 4, DEPOT, AREA, QCFG)
    insert_at, decision = insert_city([1, 2, 3], 4, parent, obs, MODEL, CFG)
    assert insert_at == 2  # between city 2 and city 3
    assert decision.chosen.action == [1, 2, 4, 3]
    assert decision.n_candidates == 4

    # cheapest-insertion oracle on added length
    def added_length(j):
        order = [1, 2, 3]
        seq = order[:j] + [4] + order[j:]
        path = [DEPOT] + [cities[c] for c in seq] + [DEPOT]
        base = [DEPOT] + [cities[c] for c in order] + [DEPOT]
        length = lambda p: sum(math.dist(a, b) for a, b in zip(p[:-1], p[1:]))
        return length(path) - length(base)

    best_j = min(range(4), key=added_length)
    assert insert_at == best_j
    assert added_length(insert_at) == pytest.approx(0.0, abs=1e-9)


def test_route_chosen_attains_min_delta():
    cities = _collinear_cities()
    obs = _obs(cities, [DEPOT])
    pts = np.asarray([cities[c] for c in sorted(cities)])
    parent = quantize_mission(pts, 4, DEPOT, AREA, QCFG)
    decision = decide_route([1, 2, 3, 4], parent, obs, MODEL, CFG)
    assert decision.chosen.delta == pytest.approx(min(s.delta for s in decision.candidates))


# ---------------------------------------------------------------------------
# motion level
# ---------------------------------------------------------------------------


def _route_word_east():
    return RouteWord(MissionWord(2, 0, 1), "mixed", 3)


def _word_rho(model, key):
    word = MotionWord.from_key(key)
    feats = np.asarray([model.dictionaries.codebook.letter_features(l) for l in word.letters])
    return float(feats[:, 3].mean())


def test_decide_motion_free_space_prefers_low_rho():
    position = (600.0, 500.0)
    predicted = (600.95, 500.0)  # cruising straight at the target
    obs = _obs({1: (800.0, 500.0)}, [position], [predicted])
    decision = decide_motion(_route_word_east(), 0, (800.0, 500.0), obs, MODEL, CFG, FIELD)
    rhos = {s.action_key: _word_rho(MODEL, s.action_key) for s in decision.candidates}
    assert rhos[decision.chosen.action_key] == pytest.approx(min(rhos.values()))


def test_decide_motion_obstacle_switches_to_higher_rho():
    position = (470.0, 500.0)
    predicted = (470.95, 500.0)
    free_obs = _obs({1: (800.0, 500.0)}, [position], [predicted])
    free = decide_motion(_route_word_east(), 0, (800.0, 500.0), free_obs, MODEL, CFG, FIELD)

    wall = Obstacle(500.0, 500.0, 12.0)  # surface 18 m ahead, inside the margin
    blocked_obs = _obs({1: (800.0, 500.0)}, [position], [predicted], obstacles=[wall])
    blocked = decide_motion(_route_word_east(), 0, (800.0, 500.0), blocked_obs, MODEL, CFG, FIELD)

    assert blocked.chosen.action_key != free.chosen.action_key
    assert _word_rho(MODEL, blocked.chosen.action_key) > _word_rho(MODEL, free.chosen.action_key)


def test_decide_motion_single_entry_dictionary():
    east = MissionWord(2, 0, 1)
    r_east = RouteWord(east, "mixed", 3)
    cruise = MotionWord((0,))
    trips = [_triplet(east, r_east, cruise) for _ in range(3)]
    tiny = learn_world_model(trips, _letters_codebook(), alpha=1.0, quantizer=QCFG)
    obs = _obs({1: (800.0, 500.0)}, [(600.0, 500.0)], [(601.0, 500.0)])
    decision = decide_motion(r_east, 0, (800.0, 500.0), obs, tiny, CFG, FIELD)
    assert decision.chosen.action == cruise
    assert decision.n_candidates == 1


def test_decide_motion_candidates_filtered_by_route_word():
    decision = decide_motion(_route_word_east(), 0, (800.0, 500.0),
                             _obs({1: (800.0, 500.0)}, [(600.0, 500.0)], [(601.0, 500.0)]),
                             MODEL, CFG, FIELD)
    co_occurring = set(MODEL.motion_words_for_route(_route_word_east().key()))
    assert {s.action_key for s in decision.candidates} == co_occurring
