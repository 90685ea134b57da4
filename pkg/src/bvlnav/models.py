"""Rover motion and range-bearing sensing models."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K

logger = logging.getLogger(__name__)


class InvalidModelError(ValueError):
    pass


def wrap_angle(a):
    """Wrap angles to (-pi, pi]; works on scalars and arrays."""
    a = np.asarray(a, dtype=float)
    out = a - 2.0 * np.pi * np.ceil((a - np.pi) / (2.0 * np.pi))
    return float(out) if out.ndim == 0 else out


def make_state(x, y, theta=0.0):
    return np.array([x, y, wrap_angle(theta)], dtype=float)


@dataclass(frozen=True)
class MotionModel:
    """Holonomic velocity-commanded rover: x' = x + u*dt + w.

    Motion noise std per axis is ``sigma_w * |u_i| * dt + sigma_w_bias``.
    """

    dt: float = 0.1
    sigma_w: float = 0.05
    sigma_w_bias: float = 0.01
    v_max: float = 2.0

    def __post_init__(self):
        if not self.dt > 0 or not self.v_max > 0:
            raise InvalidModelError("dt and v_max must be positive")
        if self.sigma_w < 0 or self.sigma_w_bias < 0:
            raise InvalidModelError("noise scales must be nonnegative")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.dt, self.sigma_w, self.sigma_w_bias, self.v_max])

    @property
    def step_length(self) -> float:
        return self.v_max * self.dt

    def noise_cov(self, u) -> np.ndarray:
        std = K.motion_noise_std(np.asarray(u, dtype=float), self.params)
        return np.diag(std**2)


@dataclass(frozen=True)
class ObservationModel:
    """Range and bearing to point landmarks; noise std grows with distance."""

    xi_r: float = 0.1
    xi_theta: float = 0.05
    sigma_rb: float = 0.01
    sigma_tb: float = 0.01
    sensing_range: float = 6.0

    def __post_init__(self):
        if min(self.xi_r, self.xi_theta, self.sigma_rb, self.sigma_tb) < 0:
            raise InvalidModelError("observation noise parameters must be nonnegative")
        if not self.sensing_range > 0:
            raise InvalidModelError("sensing_range must be positive")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.xi_r, self.xi_theta, self.sigma_rb, self.sigma_tb, self.sensing_range])

    def noise_std(self, distance):
        d = np.asarray(distance, dtype=float)
        return self.xi_r * d + self.sigma_rb, self.xi_theta * d + self.sigma_tb


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    ids: tuple
    positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if len(set(self.ids)) != len(self.ids):
            raise InvalidModelError("landmark ids must be unique")
        if len(self.ids) != pos.shape[0]:
            raise InvalidModelError("one id per landmark position is required")

    @classmethod
    def from_points(cls, points) -> "LandmarkSet":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(tuple(range(len(pts))), pts)

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True, eq=False)
class Observation:
    """Readings as parallel arrays; ``index`` refers to rows of the LandmarkSet."""

    index: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls) -> "Observation":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 2)))

    def __len__(self):
        return int(self.index.shape[0])

    def readings(self, landmarks: LandmarkSet | None = None):
        """List of (landmark id, range, bearing)."""
        ids = self.index if landmarks is None else [landmarks.ids[i] for i in self.index]
        return [(int(i), float(r), float(b)) for i, (r, b) in zip(ids, self.values)]


def clamp_control(u, v_max, diagnostics=None):
    u = np.asarray(u, dtype=float)
    clipped = np.clip(u, -v_max, v_max)
    if diagnostics is not None and np.any(clipped != u):
        diagnostics["control_clamped"] = True
    return clipped


def propagate(x, u, w, m: MotionModel, diagnostics=None) -> np.ndarray:
    """x' = x + u*dt + w with the control clamped to the per-axis speed bound."""
    u = clamp_control(u, m.v_max, diagnostics)
    return K.propagate(np.asarray(x, dtype=float), u, np.asarray(w, dtype=float), m.dt)


def draw_noise(rng, n_landmarks: int) -> np.ndarray:
    # layout shared by every generative call: 3 motion normals, then 2 per landmark
    return rng.standard_normal(3 + 2 * n_landmarks)


def observe(x, lms: LandmarkSet, m: ObservationModel, rng=None, noise=None) -> Observation:
    """Sample range-bearing readings of all landmarks within sensing range.

    Pass ``rng=None`` and ``noise=None`` for noiseless readings.
    """
    if noise is None:
        noise = np.zeros(2 * len(lms)) if rng is None else rng.standard_normal(2 * len(lms))
    ids, z = K.observe(np.asarray(x, dtype=float), lms.positions, m.params, np.asarray(noise, dtype=float))
    return Observation(ids, z)


def observation_function(x, lms: LandmarkSet, index) -> np.ndarray:
    """Noise-free stacked measurement h(x) for the given landmark rows."""
    out = []
    for i in index:
        d = lms.positions[i] - x[:2]
        out.extend([np.hypot(d[0], d[1]), wrap_angle(np.arctan2(d[1], d[0]) - x[2])])
    return np.array(out)


def linearize(x, u, lms: LandmarkSet, motion: MotionModel, observation: ObservationModel, index=None):
    """Return (A, Qw, H, R) at state ``x`` and control ``u``.

    ``index`` selects landmark rows; by default every landmark within
    sensing range of ``x``.
    """
    x = np.asarray(x, dtype=float)
    A = np.eye(3)
    Qw = motion.noise_cov(u)
    if index is None:
        d = np.hypot(*(lms.positions - x[:2]).T) if len(lms) else np.zeros(0)
        index = np.flatnonzero((d <= observation.sensing_range) & (d > 1e-12))
    H = np.zeros((2 * len(index), 3))
    R = np.zeros((2 * len(index), 2 * len(index)))
    for n, i in enumerate(index):
        Hi, r, _ = K.observation_jacobian(x, lms.positions[i, 0], lms.positions[i, 1])
        H[2 * n:2 * n + 2] = Hi
        sr, sb = observation.noise_std(r)
        R[2 * n, 2 * n] = sr**2
        R[2 * n + 1, 2 * n + 1] = sb**2
    return A, Qw, H, R


def generative_step(x, u, env, motion: MotionModel, observation: ObservationModel, rng):
    """Sample (x', z') from the motion and sensing models."""
    noise = draw_noise(rng, len(env.landmarks))
    w = np.sqrt(np.diag(motion.noise_cov(clamp_control(u, motion.v_max)))) * noise[:3]
    x_next = propagate(x, u, w, motion)
    z = observe(x_next, env.landmarks, observation, noise=noise[3:])
    return x_next, z
