"""Gaussian beliefs, EKF evolution, per-step cost and the belief metric."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .models import LandmarkSet, MotionModel, Observation, ObservationModel, clamp_control


class InvalidBeliefError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def create(cls, mean, cov) -> "GaussianBelief":
        mean = np.array(mean, dtype=float).reshape(3)
        cov = np.array(cov, dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        mean[2] = K.wrap_angle(mean[2])
        return cls(mean, 0.5 * (cov + cov.T))

    @property
    def trace(self) -> float:
        return float(np.trace(self.cov))


def check_belief(b: GaussianBelief, tol: float = 1e-10) -> GaussianBelief:
    if b.mean.shape != (3,) or b.cov.shape != (3, 3):
        raise InvalidBeliefError("belief must have a 3-vector mean and a 3x3 covariance")
    if not (np.all(np.isfinite(b.mean)) and np.all(np.isfinite(b.cov))):
        raise InvalidBeliefError("belief contains non-finite values")
    if np.max(np.abs(b.cov - b.cov.T)) > 1e-12:
        raise InvalidBeliefError("covariance is not symmetric")
    if np.linalg.eigvalsh(b.cov).min() < -tol:
        raise InvalidBeliefError("covariance is not positive semi-definite")
    return b


@dataclass(frozen=True)
class CostWeights:
    """c(b, u) = xi_p * tr(P) + xi_T * dt."""

    xi_p: float = 10.0
    xi_T: float = 1.0
    dt: float = 0.005

    def __post_init__(self):
        if min(self.xi_p, self.xi_T, self.dt) <= 0:
            raise ValueError("cost weights must be strictly positive")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.xi_p, self.xi_T, self.dt])


@dataclass(frozen=True)
class BeliefMetric:
    """Weighted mean distance plus a Frobenius covariance term."""

    w_xy: float = 1.0
    w_theta: float = 0.5
    xi_sigma: float = 1.0

    @property
    def params(self) -> np.ndarray:
        return np.array([self.w_xy, self.w_xy, self.w_theta, self.xi_sigma])


DEFAULT_METRIC = BeliefMetric()


def ekf_predict(b: GaussianBelief, u, model: MotionModel) -> GaussianBelief:
    if not (np.all(np.isfinite(b.mean)) and np.all(np.isfinite(b.cov)) and np.all(np.isfinite(u))):
        raise InvalidBeliefError("non-finite input to ekf_predict")
    u = clamp_control(u, model.v_max)
    m, P = K.ekf_predict(b.mean, b.cov, u, model.params)
    return GaussianBelief(m, P)


def ekf_update(b: GaussianBelief, z: Observation, model: ObservationModel,
               landmarks: LandmarkSet, diagnostics: dict | None = None) -> GaussianBelief:
    """EKF correction with wrapped bearing innovations (Joseph form)."""
    if len(z) == 0:
        return b
    m, P, flagged = K.ekf_update(b.mean, b.cov, z.index, z.values, landmarks.positions, model.params)
    if flagged and diagnostics is not None:
        diagnostics["innovation_regularized"] = True
    return GaussianBelief(m, P)


def step_cost(b: GaussianBelief, w: CostWeights) -> float:
    return w.xi_p * float(np.trace(b.cov)) + w.xi_T * w.dt


def belief_distance(b1: GaussianBelief, b2: GaussianBelief, metric: BeliefMetric = DEFAULT_METRIC) -> float:
    return K.belief_distance(b1.mean, b1.cov, b2.mean, b2.cov, metric.params)


def is_in_node(b: GaussianBelief, node, metric: BeliefMetric = DEFAULT_METRIC) -> bool:
    """Closed-ball membership test against ``node.center`` with radius ``node.epsilon``."""
    return belief_distance(b, node.center, metric) <= node.epsilon


def sample_state(b: GaussianBelief, rng) -> np.ndarray:
    """Draw a state from the belief; tolerates singular covariances."""
    w, V = np.linalg.eigh(b.cov)
    x = b.mean + V @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(3))
    x[2] = K.wrap_angle(x[2])
    return x
