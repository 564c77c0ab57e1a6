"""Continuous-state estimation for UAV tracking: EKF and particle filter.

State is [x, y, vx, vy]. The transition is constant-velocity; when a
commanded velocity is given it replaces the velocity component, so the model
stays linear and the Jacobian is exact. Measurements are positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ContinuousState",
    "EKFState",
    "ParticleSet",
    "NoiseConfig",
    "FilterError",
    "transition",
    "transition_jacobian",
    "measurement_matrix",
    "ekf_predict",
    "ekf_update",
    "make_particles",
    "pf_step",
    "pf_mean",
    "predicted_collision",
]

PSD_TOL = 1e-9


class FilterError(RuntimeError):
    pass


@dataclass(frozen=True)
class ContinuousState:
    position: tuple[float, float]
    velocity: tuple[float, float]

    def as_array(self) -> np.ndarray:
        return np.array([*self.position, *self.velocity], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "ContinuousState":
        arr = np.asarray(arr, dtype=float)
        return cls(position=(float(arr[0]), float(arr[1])), velocity=(float(arr[2]), float(arr[3])))


@dataclass
class EKFState:
    mean: np.ndarray  # (4,)
    cov: np.ndarray  # (4, 4)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        _check_psd(self.cov, "state covariance")

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:]


@dataclass
class NoiseConfig:
    process: np.ndarray = field(default_factory=lambda: np.diag([0.05, 0.05, 0.2, 0.2]) ** 2)
    measurement: np.ndarray = field(default_factory=lambda: (2.0**2) * np.eye(2))
    seed: int = 0

    def __post_init__(self):
        self.process = np.asarray(self.process, dtype=float)
        self.measurement = np.asarray(self.measurement, dtype=float)
        _check_psd(self.process, "process covariance")
        _check_psd(self.measurement, "measurement covariance")


def _check_psd(mat: np.ndarray, name: str) -> None:
    if not np.allclose(mat, mat.T, atol=PSD_TOL):
        raise FilterError(f"{name} is not symmetric")
    eigvals = np.linalg.eigvalsh((mat + mat.T) / 2.0)
    if eigvals.min() < -PSD_TOL:
        raise FilterError(f"{name} has negative eigenvalue {eigvals.min()}")


def transition(state: np.ndarray, control, dt: float) -> np.ndarray:
    """Constant-velocity step; a commanded velocity replaces the velocity."""
    state = np.asarray(state, dtype=float)
    if control is None:
        vel = state[2:]
    else:
        vel = np.asarray(control, dtype=float)
    return np.concatenate([state[:2] + dt * vel, vel])


def transition_jacobian(control, dt: float) -> np.ndarray:
    f = np.eye(4)
    if control is None:
        f[0, 2] = dt
        f[1, 3] = dt
    else:
        f[2, 2] = 0.0
        f[3, 3] = 0.0
    return f


def measurement_matrix() -> np.ndarray:
    h = np.zeros((2, 4))
    h[0, 0] = 1.0
    h[1, 1] = 1.0
    return h


def ekf_predict(state: EKFState, control, dt: float, noise: NoiseConfig) -> EKFState:
    f = transition_jacobian(control, dt)
    mean = transition(state.mean, control, dt)
    cov = f @ state.cov @ f.T + noise.process
    return EKFState(mean=mean, cov=(cov + cov.T) / 2.0)


def ekf_update(state: EKFState, measurement, noise: NoiseConfig) -> EKFState:
    h = measurement_matrix()
    innovation_cov = h @ state.cov @ h.T + noise.measurement
    try:
        gain = np.linalg.solve(innovation_cov.T, (state.cov @ h.T).T).T
    except np.linalg.LinAlgError as exc:
        raise FilterError("singular innovation covariance") from exc
    residual = np.asarray(measurement, dtype=float) - h @ state.mean
    mean = state.mean + gain @ residual
    cov = (np.eye(4) - gain @ h) @ state.cov
    return EKFState(mean=mean, cov=(cov + cov.T) / 2.0)


@dataclass
class ParticleSet:
    states: np.ndarray  # (n, 4)
    weights: np.ndarray  # (n,)
    rng: np.random.Generator
    degenerate: bool = False  # set when all weights collapsed and were reset

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) < 1:
            raise FilterError("particle set is empty")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise FilterError(f"weights sum to {self.weights.sum()}")


def make_particles(initial: np.ndarray, spread: np.ndarray, n_particles: int, seed: int) -> ParticleSet:
    rng = np.random.default_rng(seed)
    states = np.asarray(initial, dtype=float) + rng.multivariate_normal(
        np.zeros(4), np.asarray(spread, dtype=float), size=n_particles
    )
    weights = np.full(n_particles, 1.0 / n_particles)
    return ParticleSet(states=states, weights=weights, rng=rng)


def _systematic_resample(particles: ParticleSet) -> np.ndarray:
    n = len(particles.weights)
    positions = (particles.rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(particles.weights)
    cumulative[-1] = 1.0
    return particles.states[np.searchsorted(cumulative, positions)]


def pf_step(particles: ParticleSet, control, measurement, noise: NoiseConfig, dt: float) -> ParticleSet:
    """Propagate, reweight by the Gaussian position likelihood, and resample
    systematically when the effective sample size drops below n/2.

    A measurement that zeroes every weight resets them to uniform and flags
    the returned set as degenerate.
    """
    rng = particles.rng
    n = len(particles.weights)
    if control is None:
        vel = particles.states[:, 2:]
    else:
        vel = np.broadcast_to(np.asarray(control, dtype=float), (n, 2))
    propagated = np.hstack([particles.states[:, :2] + dt * vel, vel])
    propagated = propagated + rng.multivariate_normal(np.zeros(4), noise.process, size=n)

    h = measurement_matrix()
    residual = np.asarray(measurement, dtype=float) - propagated @ h.T
    try:
        r_inv = np.linalg.inv(noise.measurement)
    except np.linalg.LinAlgError as exc:
        raise FilterError("singular measurement covariance") from exc
    log_lik = -0.5 * np.einsum("ij,jk,ik->i", residual, r_inv, residual)
    # every particle's raw likelihood underflows to zero: measurement is
    # impossibly far, so reset the weights instead of renormalizing noise
    degenerate = bool(not np.isfinite(log_lik.max()) or log_lik.max() < -700.0)
    if degenerate:
        weights = np.full(n, 1.0 / n)
    else:
        log_lik -= log_lik.max()
        weights = particles.weights * np.exp(log_lik)
        total = weights.sum()
        if not np.isfinite(total) or total <= 0.0:
            degenerate = True
            weights = np.full(n, 1.0 / n)
        else:
            weights = weights / total

    ess = 1.0 / float(np.sum(weights**2))
    states = propagated
    if ess < n / 2.0:
        states = _systematic_resample(ParticleSet(states=propagated, weights=weights, rng=rng))
        weights = np.full(n, 1.0 / n)
    return ParticleSet(states=states, weights=weights, rng=rng, degenerate=degenerate)


def pf_mean(particles: ParticleSet) -> np.ndarray:
    return particles.weights @ particles.states


def predicted_collision(predicted_positions, d_min: float) -> list[tuple[int, int]]:
    """All unordered index pairs whose predicted separation is below d_min."""
    pts = [np.asarray(p, dtype=float) for p in predicted_positions]
    pairs = []
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            if float(np.linalg.norm(pts[i] - pts[j])) < d_min:
                pairs.append((i, j))
    return pairs
