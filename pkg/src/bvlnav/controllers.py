"""LQG synthesis: Riccati solvers, node stabilizers and edge trackers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import _kernels as K
from .beliefs import GaussianBelief
from .models import MotionModel, ObservationModel, linearize

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
MAX_ITER = 10_000
DIVERGED = 1e100


class SynthesisError(RuntimeError):
    pass


class EdgeRejectedError(ValueError):
    pass


@dataclass(frozen=True)
class LqgWeights:
    """State and control weights used for every controller synthesis."""

    wx: float = 1.0
    wu: float = 0.1

    @property
    def Wx(self):
        return self.wx * np.eye(3)

    @property
    def Wu(self):
        return self.wu * np.eye(3)


@dataclass(frozen=True, eq=False)
class DareSolution:
    gain: np.ndarray
    cost_matrix: np.ndarray
    residual: float
    spectral_radius: float


def _riccati_map(S, A, B, Wx, Wu):
    BtS = B.T @ S
    G = Wu + BtS @ B
    L = np.linalg.solve(G, BtS @ A)
    out = Wx + A.T @ S @ A - A.T @ S @ B @ L
    return 0.5 * (out + out.T), L


def solve_dare(A, B, Wx, Wu, label: str = "controller") -> DareSolution:
    """Stabilizing solution of the control Riccati equation.

    Starts from scipy's Schur solution when it is available and finishes with
    fixed-point iterations of the Riccati map until the residual is below
    ``RESIDUAL_TOL``.
    """
    A, B, Wx, Wu = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Wx, Wu))
    if np.linalg.eigvalsh(0.5 * (Wu + Wu.T)).min() <= 0:
        raise SynthesisError(f"{label}: control weight must be positive definite")
    try:
        S = linalg.solve_discrete_are(A, B, Wx, Wu)
        if not np.all(np.isfinite(S)):
            raise ValueError
    except (ValueError, np.linalg.LinAlgError):
        S = Wx.copy()
    S = 0.5 * (S + S.T)
    residual = np.inf
    for _ in range(MAX_ITER):
        S_next, L = _riccati_map(S, A, B, Wx, Wu)
        residual = float(np.linalg.norm(S_next - S))
        S = S_next
        if residual < RESIDUAL_TOL or not residual < DIVERGED:
            break
    if not np.all(np.isfinite(S)) or not residual < DIVERGED:
        raise SynthesisError(f"{label}: Riccati iteration diverged")
    _, L = _riccati_map(S, A, B, Wx, Wu)
    residual = float(np.linalg.norm(_riccati_map(S, A, B, Wx, Wu)[0] - S))
    if not residual < RESIDUAL_TOL:
        raise SynthesisError(f"{label}: Riccati iteration did not converge (residual {residual:.3g})")
    rho = float(np.max(np.abs(np.linalg.eigvals(A - B @ L))))
    if not rho < 1.0:
        raise SynthesisError(f"{label}: closed loop is not stable (spectral radius {rho:.6f})")
    return DareSolution(L, S, residual, rho)


def is_detectable(A, H, tol: float = 1e-9) -> bool:
    """PBH test: every mode with |lambda| >= 1 must be visible through H."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    H = np.asarray(H, dtype=float).reshape(-1, A.shape[0])
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - tol:
            continue
        M = np.vstack([lam * np.eye(n) - A, H.astype(complex)])
        if np.linalg.matrix_rank(M, tol=1e-8) < n:
            return False
    return True


def filter_riccati_step(P, A, H, Qw, R):
    """One predict-then-update covariance step."""
    Pm = A @ P @ A.T + Qw
    if H.shape[0] == 0:
        return 0.5 * (Pm + Pm.T)
    S = H @ Pm @ H.T + R
    Kg = np.linalg.solve(S, H @ Pm).T
    IKH = np.eye(A.shape[0]) - Kg @ H
    out = IKH @ Pm @ IKH.T + Kg @ R @ Kg.T
    return 0.5 * (out + out.T)


def stationary_filter_covariance(A, H, Qw, R, label: str = "node") -> np.ndarray:
    """Posterior fixed point of the predict-then-update filter recursion."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    H = np.asarray(H, dtype=float).reshape(-1, n)
    Qw = np.atleast_2d(np.asarray(Qw, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float)) if H.shape[0] else np.zeros((0, 0))
    if not is_detectable(A, H):
        raise SynthesisError(f"{label}: (A, H) is not detectable")
    try:
        # prior covariance solves the dual control Riccati equation
        Pm = linalg.solve_discrete_are(A.T, H.T, Qw, R)
        S = H @ Pm @ H.T + R
        P = Pm - Pm @ H.T @ np.linalg.solve(S, H @ Pm)
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(P)):
            raise ValueError
    except (ValueError, np.linalg.LinAlgError):
        P = Qw.copy()
    residual = np.inf
    for _ in range(MAX_ITER):
        P_next = filter_riccati_step(P, A, H, Qw, R)
        residual = float(np.linalg.norm(P_next - P))
        P = P_next
        if residual < RESIDUAL_TOL * 1e-2:
            break
    if not residual < RESIDUAL_TOL:
        raise SynthesisError(f"{label}: filter Riccati iteration did not converge (residual {residual:.3g})")
    return P


@dataclass(frozen=True, eq=False)
class StationaryLqg:
    target: np.ndarray
    gain: np.ndarray
    kalman_gain: np.ndarray
    P_c: np.ndarray
    spectral_radius: float = 0.0

    @property
    def center(self) -> GaussianBelief:
        return GaussianBelief(self.target, self.P_c)

    @property
    def n_nominal(self) -> int:
        return 0


@dataclass(frozen=True, eq=False)
class EdgeController:
    """Straight-line tracker from ``start`` to ``target`` with a terminal stabilizer.

    The nominal moves at constant velocity for ``n_nominal`` steps, heading
    interpolated along the shortest arc.  For the holonomic model the
    linearization is the same at every nominal step, so the per-step tracking
    gains are all equal to ``gain``.
    """

    start: np.ndarray
    target: np.ndarray
    n_nominal: int
    dt: float
    gain: np.ndarray
    stabilizer: StationaryLqg = field(repr=False)

    def tracking_gain(self, k: int) -> np.ndarray:
        return self.gain

    def nominal_state(self, k: int) -> np.ndarray:
        if self.n_nominal == 0:
            return self.target.copy()
        frac = min(k, self.n_nominal) / self.n_nominal
        dth = K.wrap_angle(self.target[2] - self.start[2])
        out = self.start + frac * (self.target - self.start)
        out[2] = K.wrap_angle(self.start[2] + frac * dth)
        return out

    def nominal_control(self, k: int) -> np.ndarray:
        if k >= self.n_nominal:
            return np.zeros(3)
        d = self.target - self.start
        d[2] = K.wrap_angle(d[2])
        return d / (self.n_nominal * self.dt)

    @property
    def nominal(self):
        """List of (state, control) pairs; the last state is the target."""
        return [(self.nominal_state(k), self.nominal_control(k)) for k in range(self.n_nominal)] + \
            ([(self.nominal_state(self.n_nominal), np.zeros(3))] if self.n_nominal else [])


def nominal_steps(vi, vj, motion: MotionModel) -> int:
    """Steps needed to move from vi to vj at full per-axis speed."""
    return int(K.nominal_steps(np.asarray(vi, dtype=float), np.asarray(vj, dtype=float),
                               motion.v_max * motion.dt))


def tracking_gain(motion: MotionModel, weights: LqgWeights = LqgWeights()) -> DareSolution:
    A = np.eye(3)
    B = motion.dt * np.eye(3)
    return solve_dare(A, B, weights.Wx, weights.Wu, label="tracking")


def make_node_controller(v, env, motion: MotionModel, observation: ObservationModel,
                         weights: LqgWeights = LqgWeights(), label: str = "node") -> StationaryLqg:
    v = np.asarray(v, dtype=float)
    if env.collides(v):
        raise SynthesisError(f"{label}: center is in collision")
    u0 = np.zeros(3)
    A, Qw, H, R = linearize(v, u0, env.landmarks, motion, observation)
    sol = solve_dare(A, motion.dt * np.eye(3), weights.Wx, weights.Wu, label=label)
    P_c = stationary_filter_covariance(A, H, Qw, R, label=label)
    Pm = A @ P_c @ A.T + Qw
    Kg = np.linalg.solve(H @ Pm @ H.T + R, H @ Pm).T if H.shape[0] else np.zeros((3, 0))
    return StationaryLqg(v.copy(), sol.gain, Kg, P_c, sol.spectral_radius)


def make_edge_controller(vi, vj, env, motion: MotionModel, stabilizer: StationaryLqg,
                         gain: np.ndarray | None = None) -> EdgeController:
    vi = np.asarray(vi, dtype=float)
    vj = np.asarray(vj, dtype=float)
    if env.blocked(vi, vj):
        raise EdgeRejectedError("nominal segment is in collision")
    if gain is None:
        gain = tracking_gain(motion).gain
    return EdgeController(vi.copy(), vj.copy(), nominal_steps(vi, vj, motion), motion.dt, gain, stabilizer)


def apply_controller(ctrl, b: GaussianBelief, k: int, v_max: float) -> np.ndarray:
    """u = u_nom(k) - L (mean - x_nom(k)), stabilizer once past the nominal; clamped."""
    if isinstance(ctrl, StationaryLqg):
        return K.control_law(b.mean, 0, ctrl.target, ctrl.target, 0, ctrl.gain, ctrl.gain, v_max, 1.0)
    return K.control_law(b.mean, int(k), ctrl.start, ctrl.target, ctrl.n_nominal, ctrl.gain,
                         ctrl.stabilizer.gain, v_max, ctrl.dt)
