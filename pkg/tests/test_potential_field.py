import numpy as np
import pytest

from swarmwm.potential_field import (
    FieldConfig,
    NonConvergenceError,
    Trajectory,
    attractive_potential,
    gradient_step,
    load_trajectories_csv,
    potential_gradient,
    repulsive_potential,
    repulsive_ratio,
    save_trajectories_csv,
    synthesize_trajectory,
)
from swarmwm.scenario import Obstacle


CFG = FieldConfig()


def test_attractive_zero_at_target():
    assert attractive_potential((3.0, -2.0), (3.0, -2.0), k_att=1.0) == 0.0


def test_attractive_hand_value():
    assert attractive_potential((0.0, 0.0), (3.0, 4.0), k_att=1.0) == pytest.approx(12.5)


def test_attractive_linear_in_gain():
    v1 = attractive_potential((1.0, 1.0), (4.0, 5.0), k_att=1.0)
    v2 = attractive_potential((1.0, 1.0), (4.0, 5.0), k_att=2.0)
    assert v2 == pytest.approx(2.0 * v1)


def test_repulsive_zero_beyond_influence():
    obs = Obstacle(2.0 * CFG.influence_dist + 5.0, 0.0, 5.0)
    assert repulsive_potential((0.0, 0.0), [obs], [], CFG) == 0.0


def test_repulsive_zero_when_empty():
    assert repulsive_potential((0.0, 0.0), [], [], CFG) == 0.0


def test_repulsive_hand_value_surface_at_half_influence():
    # surface distance d0/2 = 25 with k_rep = 1, d0 = 50: 0.5*(1/25 - 1/50)^2
    cfg = FieldConfig(k_rep_obs=1.0, influence_dist=50.0)
    obs = Obstacle(35.0, 0.0, 10.0)  # surface at x = 25
    val = repulsive_potential((0.0, 0.0), [obs], [], cfg)
    assert val == pytest.approx(2.0e-4, rel=1e-9)


def test_repulsive_neighbor_term_matches_obstacle_form():
    cfg = FieldConfig(k_rep_uav=1.0, influence_dist=50.0)
    val = repulsive_potential((0.0, 0.0), [], [(25.0, 0.0)], cfg)
    assert val == pytest.approx(2.0e-4, rel=1e-9)


def test_gradient_step_at_target_is_fixed_point():
    new_x, vel = gradient_step((5.0, 5.0), (5.0, 5.0), [], [], CFG)
    assert np.allclose(vel, 0.0)
    assert np.allclose(new_x, (5.0, 5.0))


def test_gradient_step_hand_case_with_cap():
    cfg = FieldConfig(k_att=1.0, control_gain=1.0, v_max=10.0, dt=0.1)
    new_x, vel = gradient_step((0.0, 0.0), (10.0, 0.0), [], [], cfg)
    assert np.allclose(vel, (10.0, 0.0))
    assert np.allclose(new_x, (1.0, 0.0))


def test_gradient_matches_finite_differences():
    # central finite differences of the total potential as an oracle,
    # sampled away from the hinge kinks and the barrier floor
    rng = np.random.default_rng(42)
    cfg = FieldConfig()
    eps = 1e-5
    checked = 0
    while checked < 100:
        x = rng.uniform(-80.0, 80.0, size=2)
        target = rng.uniform(-80.0, 80.0, size=2)
        obstacles = [Obstacle(*rng.uniform(-80.0, 80.0, size=2), rng.uniform(2.0, 8.0))]
        others = [rng.uniform(-80.0, 80.0, size=2)]
        dists = [obstacles[0].surface_distance(x), float(np.linalg.norm(x - others[0]))]
        if any(abs(d - cfg.influence_dist) < 0.5 or d < 1.0 for d in dists):
            continue
        if abs(float(np.linalg.norm(x - target)) - cfg.att_saturation) < 0.5:
            continue
        grad = potential_gradient(x, target, obstacles, others, cfg)
        fd = np.zeros(2)
        for k in range(2):
            hi = x.copy()
            lo = x.copy()
            hi[k] += eps
            lo[k] -= eps
            u_hi = attractive_potential(hi, target, cfg.k_att, cfg.att_saturation) + repulsive_potential(
                hi, obstacles, others, cfg
            )
            u_lo = attractive_potential(lo, target, cfg.k_att, cfg.att_saturation) + repulsive_potential(
                lo, obstacles, others, cfg
            )
            fd[k] = (u_hi - u_lo) / (2 * eps)
        scale = max(np.linalg.norm(grad), 1e-9)
        assert np.linalg.norm(grad - fd) / scale < 1e-6
        checked += 1


def test_synthesize_out_and_back_length():
    traj = synthesize_trajectory([(0.0, 0.0), (100.0, 0.0), (0.0, 0.0)], [], [], CFG)
    length = traj.path_length()
    assert abs(length - 200.0) / 200.0 < 0.05
    assert len(traj.waypoint_marks) == 2


def test_synthesize_empty_route_single_sample():
    traj = synthesize_trajectory([(10.0, 20.0), (10.0, 20.0)], [], [], CFG)
    assert len(traj) == 1
    assert np.allclose(traj.pos[0], (10.0, 20.0))


def test_synthesize_speed_cap_invariant():
    traj = synthesize_trajectory([(0.0, 0.0), (300.0, 40.0), (0.0, 0.0)], [], [], CFG)
    speeds = np.linalg.norm(traj.vel, axis=1)
    assert np.all(speeds <= CFG.v_max + 1e-9)


def test_synthesize_head_on_avoidance():
    # opposite directions along nearly the same corridor (4 m lateral gap)
    first = synthesize_trajectory([(0.0, 0.0), (200.0, 0.0)], [], [], CFG)
    second = synthesize_trajectory([(200.0, 4.0), (0.0, 4.0)], [], [first], CFG)
    min_dist = np.inf
    engaged = False
    for i, t in enumerate(second.t):
        other = first.position_at(float(t))
        d = float(np.linalg.norm(second.pos[i] - other))
        min_dist = min(min_dist, d)
        if repulsive_potential(second.pos[i], [], [other], CFG) > 0:
            engaged = True
    assert min_dist > 0
    assert engaged


def test_synthesize_nonconvergence_names_waypoint():
    # a tight step budget cannot reach a far waypoint
    cfg = FieldConfig(step_budget=5)
    with pytest.raises(NonConvergenceError) as err:
        synthesize_trajectory([(0.0, 0.0), (500.0, 0.0), (0.0, 0.0)], [], [], cfg)
    assert err.value.waypoint_index == 1


def _constant_segment(n=21, speed=5.0, dt=0.1):
    t = np.arange(n) * dt
    pos = np.stack([speed * t, np.zeros(n)], axis=1)
    vel = np.tile([speed, 0.0], (n, 1))
    return Trajectory(t=t, pos=pos, vel=vel)


def test_repulsive_ratio_zero_without_sources():
    seg = _constant_segment()
    assert repulsive_ratio(seg, [], [], CFG) == 0.0


def test_repulsive_ratio_approaches_one_inside_influence():
    # segment parked at its own target: attraction is ~0, repulsion positive
    n = 11
    t = np.arange(n) * 0.1
    pos = np.tile([0.0, 0.0], (n, 1))
    vel = np.zeros((n, 2))
    seg = Trajectory(t=t, pos=pos, vel=vel)
    obs = Obstacle(10.0, 0.0, 5.0)
    ratio = repulsive_ratio(seg, [obs], [], CFG)
    assert ratio == pytest.approx(1.0)


def test_repulsive_ratio_matches_quadrature_oracle():
    cfg = FieldConfig()
    rng = np.random.default_rng(3)
    obs = [Obstacle(60.0, 5.0, 10.0)]
    n = 40
    t = np.arange(n) * cfg.dt
    pos = np.stack([np.linspace(0, 100, n), rng.normal(0, 1, n)], axis=1)
    vel = np.gradient(pos, t, axis=0)
    seg = Trajectory(t=t, pos=pos, vel=vel)
    target = seg.pos[-1]

    rep = np.array([repulsive_potential(p, obs, [], cfg) for p in pos])
    att = np.array([attractive_potential(p, target, cfg.k_att) for p in pos])
    oracle = np.trapezoid(rep, t) / np.trapezoid(rep + att, t)

    assert repulsive_ratio(seg, obs, [], cfg) == pytest.approx(oracle, abs=1e-9)


def test_repulsive_ratio_bounded_random():
    cfg = FieldConfig()
    rng = np.random.default_rng(9)
    for _ in range(50):
        n = int(rng.integers(2, 30))
        t = np.arange(n) * cfg.dt
        pos = rng.uniform(-50, 50, size=(n, 2))
        vel = np.gradient(pos, t, axis=0) if n > 1 else np.zeros((n, 2))
        seg = Trajectory(t=t, pos=pos, vel=vel)
        obs = [Obstacle(*rng.uniform(-50, 50, size=2), rng.uniform(1, 10))]
        ratio = repulsive_ratio(seg, obs, [], cfg)
        assert 0.0 <= ratio <= 1.0


def test_trajectory_csv_roundtrip(tmp_path):
    traj = synthesize_trajectory([(0.0, 0.0), (30.0, 10.0), (0.0, 0.0)], [], [], CFG)
    path = tmp_path / "traj.csv"
    save_trajectories_csv([traj], path)
    loaded = load_trajectories_csv(path)
    assert len(loaded) == 1
    assert np.array_equal(loaded[0].t, traj.t)
    assert np.array_equal(loaded[0].pos, traj.pos)
    assert np.array_equal(loaded[0].vel, traj.vel)


def test_field_config_validation():
    with pytest.raises(ValueError):
        FieldConfig(k_att=0.0)
    with pytest.raises(ValueError):
        FieldConfig(dt=-0.1)
    with pytest.raises(ValueError):
        FieldConfig(influence_dist=0.0)
