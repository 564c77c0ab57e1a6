import numpy as np
import pytest

from swarmwm.filters import (
    ContinuousState,
    EKFState,
    FilterError,
    NoiseConfig,
    ekf_predict,
    ekf_update,
    make_particles,
    measurement_matrix,
    pf_mean,
    pf_step,
    predicted_collision,
    transition,
    transition_jacobian,
)


def _noise(q_scale=0.01, r_scale=1.0, seed=0):
    return NoiseConfig(process=q_scale * np.eye(4), measurement=r_scale * np.eye(2), seed=seed)


def test_continuous_state_roundtrip():
    s = ContinuousState(position=(1.0, 2.0), velocity=(3.0, 4.0))
    assert ContinuousState.from_array(s.as_array()) == s


def test_ekf_predict_zero_velocity_fixed_point():
    state = EKFState(mean=np.zeros(4), cov=np.eye(4))
    noise = NoiseConfig(process=np.zeros((4, 4)), measurement=np.eye(2))
    out = ekf_predict(state, (0.0, 0.0), dt=0.1, noise=noise)
    assert np.allclose(out.mean, 0.0)


def test_ekf_predict_identity_keeps_covariance():
    cov = np.diag([1.0, 2.0, 3.0, 4.0])
    state = EKFState(mean=np.zeros(4), cov=cov)
    noise = NoiseConfig(process=np.zeros((4, 4)), measurement=np.eye(2))
    out = ekf_predict(state, None, dt=0.0, noise=noise)
    assert np.allclose(out.cov, cov)


def test_ekf_predict_trace_grows_with_psd_process_noise():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.normal(size=(4, 4))
        cov = a @ a.T + 1e-9 * np.eye(4)
        b = rng.normal(size=(4, 4))
        q = b @ b.T
        state = EKFState(mean=rng.normal(size=4), cov=cov)
        noise = NoiseConfig(process=q, measurement=np.eye(2))
        out = ekf_predict(state, None, dt=0.0, noise=noise)
        # F = I at dt 0, so the trace grows by exactly trace(Q)
        assert np.trace(out.cov) >= np.trace(cov) - 1e-9


def test_ekf_update_scalar_reduction_gain_half():
    # P = I, H picks positions, R = I: gain 0.5 on the position block
    state = EKFState(mean=np.zeros(4), cov=np.eye(4))
    out = ekf_update(state, (1.0, 1.0), _noise(r_scale=1.0))
    assert np.allclose(out.mean[:2], (0.5, 0.5))


def test_ekf_update_perfect_measurement_limit():
    state = EKFState(mean=np.zeros(4), cov=np.eye(4))
    noise = NoiseConfig(process=np.eye(4), measurement=1e-14 * np.eye(2))
    out = ekf_update(state, (3.0, -2.0), noise)
    assert np.allclose(out.mean[:2], (3.0, -2.0), atol=1e-6)


def test_ekf_update_never_inflates_covariance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = rng.normal(size=(4, 4))
        cov = a @ a.T + 1e-6 * np.eye(4)
        state = EKFState(mean=rng.normal(size=4), cov=cov)
        out = ekf_update(state, rng.normal(size=2), _noise(r_scale=float(rng.uniform(0.1, 4.0))))
        diff = cov - out.cov
        eigvals = np.linalg.eigvalsh((diff + diff.T) / 2)
        assert eigvals.min() >= -1e-9  # posterior <= prior in Loewner order
        out_eigs = np.linalg.eigvalsh(out.cov)
        assert out_eigs.min() >= -1e-9


def _kalman_oracle(measurements, controls, dt, noise, x0, p0):
    """Textbook Kalman filter written independently with explicit matrices."""
    h = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    x = x0.copy()
    p = p0.copy()
    means = []
    for y, u in zip(measurements, controls):
        if u is None:
            f = np.array([[1, 0, dt, 0], [0, 1, 0, dt], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
            x = f @ x
        else:
            # commanded velocity replaces the velocity: no old-state coupling
            f = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
            x = np.concatenate([x[:2] + dt * np.asarray(u), np.asarray(u, dtype=float)])
        p = f @ p @ f.T + noise.process
        s = h @ p @ h.T + noise.measurement
        k = p @ h.T @ np.linalg.inv(s)
        x = x + k @ (y - h @ x)
        p = (np.eye(4) - k @ h) @ p
        p = (p + p.T) / 2
        means.append(x.copy())
    return np.asarray(means)


def _simulate_cv(n, dt, noise, seed, with_control=False):
    rng = np.random.default_rng(seed)
    truth = np.array([0.0, 0.0, 1.0, 0.5])
    truths, measurements, controls = [], [], []
    for i in range(n):
        u = (1.0 + 0.1 * np.sin(i * 0.1), 0.5) if with_control else None
        truth = transition(truth, u, dt) + rng.multivariate_normal(np.zeros(4), noise.process)
        y = truth[:2] + rng.multivariate_normal(np.zeros(2), noise.measurement)
        truths.append(truth.copy())
        measurements.append(y)
        controls.append(u)
    return np.asarray(truths), measurements, controls


def test_ekf_equals_classical_kalman():
    noise = _noise(q_scale=0.05, r_scale=2.0)
    truths, measurements, controls = _simulate_cv(100, 0.1, noise, seed=4)
    x0 = np.zeros(4)
    p0 = np.eye(4)
    oracle = _kalman_oracle(measurements, controls, 0.1, noise, x0, p0)
    state = EKFState(mean=x0.copy(), cov=p0.copy())
    for i, (y, u) in enumerate(zip(measurements, controls)):
        state = ekf_update(ekf_predict(state, u, 0.1, noise), y, noise)
        assert np.allclose(state.mean, oracle[i], atol=1e-10)


def test_ekf_equals_classical_kalman_with_control():
    noise = _noise(q_scale=0.05, r_scale=2.0)
    truths, measurements, controls = _simulate_cv(60, 0.1, noise, seed=5, with_control=True)
    x0 = np.zeros(4)
    state = EKFState(mean=x0.copy(), cov=np.eye(4))
    oracle = _kalman_oracle(measurements, controls, 0.1, noise, x0, np.eye(4))
    for i, (y, u) in enumerate(zip(measurements, controls)):
        state = ekf_update(ekf_predict(state, u, 0.1, noise), y, noise)
        assert np.allclose(state.mean, oracle[i], atol=1e-10)


def test_ekf_beats_raw_measurements():
    noise = _noise(q_scale=0.01, r_scale=4.0)
    ratios = []
    for seed in range(30):
        truths, measurements, controls = _simulate_cv(100, 0.1, noise, seed=100 + seed)
        state = EKFState(mean=np.array([0.0, 0.0, 1.0, 0.5]), cov=np.eye(4))
        est_err, meas_err = [], []
        for truth, y, u in zip(truths, measurements, controls):
            state = ekf_update(ekf_predict(state, u, 0.1, noise), y, noise)
            est_err.append(np.sum((state.position - truth[:2]) ** 2))
            meas_err.append(np.sum((y - truth[:2]) ** 2))
        ratios.append(np.sqrt(np.mean(est_err)) / np.sqrt(np.mean(meas_err)))
    assert np.mean(ratios) < 1.0


def test_pf_identical_particles_mean():
    noise = NoiseConfig(process=np.zeros((4, 4)), measurement=np.eye(2))
    particles = make_particles(np.array([1.0, 2.0, 0.0, 0.0]), np.zeros((4, 4)), 50, seed=0)
    out = pf_step(particles, None, (1.0, 2.0), noise, dt=0.0)
    assert np.allclose(pf_mean(out), (1.0, 2.0, 0.0, 0.0))


def test_pf_weights_normalized_after_step():
    noise = _noise()
    particles = make_particles(np.zeros(4), np.eye(4), 200, seed=1)
    out = pf_step(particles, (1.0, 0.0), (0.1, 0.0), noise, dt=0.1)
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_pf_degenerate_measurement_resets_uniform():
    noise = NoiseConfig(process=1e-8 * np.eye(4), measurement=1e-12 * np.eye(2))
    particles = make_particles(np.zeros(4), 1e-8 * np.eye(4), 100, seed=2)
    out = pf_step(particles, None, (1e9, 1e9), noise, dt=0.1)
    assert out.degenerate
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_pf_tracks_kalman_mean():
    noise = _noise(q_scale=0.05, r_scale=1.0)
    truths, measurements, controls = _simulate_cv(30, 0.1, noise, seed=6)
    oracle = _kalman_oracle(measurements, controls, 0.1, noise, np.zeros(4), np.eye(4))

    finals = []
    for seed in range(30):
        particles = make_particles(np.zeros(4), np.eye(4), 5000, seed=seed)
        for y, u in zip(measurements, controls):
            particles = pf_step(particles, u, y, noise, dt=0.1)
        finals.append(pf_mean(particles)[:2])
    finals = np.asarray(finals)
    mc_sigma = finals.std(axis=0, ddof=1) / np.sqrt(len(finals))
    gap = np.abs(finals.mean(axis=0) - oracle[-1][:2])
    assert np.all(gap <= 3 * mc_sigma + 1e-6)


def test_pf_converges_with_particle_count():
    noise = _noise(q_scale=0.05, r_scale=1.0)
    truths, measurements, controls = _simulate_cv(30, 0.1, noise, seed=7)
    oracle = _kalman_oracle(measurements, controls, 0.1, noise, np.zeros(4), np.eye(4))
    errors = []
    for n_p in (100, 1000, 5000):
        gaps = []
        for seed in range(10):
            particles = make_particles(np.zeros(4), np.eye(4), n_p, seed=seed)
            for y, u in zip(measurements, controls):
                particles = pf_step(particles, u, y, noise, dt=0.1)
            gaps.append(np.linalg.norm(pf_mean(particles)[:2] - oracle[-1][:2]))
        errors.append(np.mean(gaps))
    assert errors[2] < errors[0]


def test_covariances_stay_symmetric_psd():
    rng = np.random.default_rng(3)
    noise = _noise(q_scale=0.1, r_scale=1.0)
    state = EKFState(mean=np.zeros(4), cov=np.eye(4))
    for i in range(100):
        u = tuple(rng.normal(size=2)) if i % 3 else None
        state = ekf_predict(state, u, 0.1, noise)
        state = ekf_update(state, rng.normal(size=2), noise)
        assert np.allclose(state.cov, state.cov.T, atol=1e-9)
        assert np.linalg.eigvalsh(state.cov).min() >= -1e-9


def test_ekf_rejects_invalid_covariance():
    with pytest.raises(FilterError):
        EKFState(mean=np.zeros(4), cov=-np.eye(4))
    with pytest.raises(FilterError):
        NoiseConfig(process=np.eye(4), measurement=np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_predicted_collision_pairs():
    assert predicted_collision([(0.0, 0.0), (5.0, 0.0)], d_min=10.0) == [(0, 1)]
    assert predicted_collision([(0.0, 0.0), (50.0, 0.0)], d_min=10.0) == []
    assert predicted_collision([(0.0, 0.0)], d_min=10.0) == []


def test_predicted_collision_matches_brute_force():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        pts = rng.uniform(0, 60, size=(n, 2))
        d_min = float(rng.uniform(5, 30))
        got = set(predicted_collision(pts, d_min))
        want = {
            (i, j)
            for i in range(n)
            for j in range(i + 1, n)
            if np.hypot(*(pts[i] - pts[j])) < d_min
        }
        assert got == want


def test_transition_jacobian_matches_model():
    for u in (None, (2.0, -1.0)):
        f = transition_jacobian(u, 0.1)
        s = np.array([1.0, 2.0, 3.0, 4.0])
        base = transition(s, u, 0.1)
        for k in range(4):
            bumped = s.copy()
            bumped[k] += 1e-6
            fd = (transition(bumped, u, 0.1) - base) / 1e-6
            assert np.allclose(fd, f[:, k], atol=1e-9)
