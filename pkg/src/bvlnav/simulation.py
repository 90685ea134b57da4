"""Rover simulator: bundles the models and environment arrays for the kernels."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels as K
from .beliefs import DEFAULT_METRIC, BeliefMetric, CostWeights, GaussianBelief
from .controllers import LqgWeights, tracking_gain
from .models import MotionModel, ObservationModel, draw_noise


@dataclass(frozen=True)
class Models:
    motion: MotionModel = field(default_factory=MotionModel)
    observation: ObservationModel = field(default_factory=ObservationModel)
    weights: CostWeights = field(default_factory=CostWeights)
    metric: BeliefMetric = DEFAULT_METRIC
    lqg: LqgWeights = field(default_factory=LqgWeights)

    def to_dict(self) -> dict:
        return {name: vars(getattr(self, name)).copy()
                for name in ("motion", "observation", "weights", "metric", "lqg")}

    @classmethod
    def from_dict(cls, doc: dict | None) -> "Models":
        doc = doc or {}
        return cls(
            motion=MotionModel(**doc.get("motion", {})),
            observation=ObservationModel(**doc.get("observation", {})),
            weights=CostWeights(**doc.get("weights", {})),
            metric=BeliefMetric(**doc.get("metric", {})),
            lqg=LqgWeights(**doc.get("lqg", {})),
        )


def derive_seed(seed: int, label: str) -> int:
    """Stable 63-bit seed for a labelled stream of an episode seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))


def kernel_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


class RoverSimulator:
    """Generative model plus EKF for one environment."""

    def __init__(self, env, models: Models | None = None):
        self.env = env
        self.models = models or Models()
        m = self.models
        self.mparams = m.motion.params
        self.oparams = m.observation.params
        self.cparams = m.weights.params
        self.dparams = m.metric.params
        self.landmarks = env.landmarks.positions
        self.rects = env.rects
        self.bounds = env.free_bounds
        self.plan_rects = env.plan_rects
        self.plan_bounds = env.plan_bounds
        self.n_noise = 3 + 2 * len(env.landmarks)

    @property
    def step_length(self) -> float:
        return self.models.motion.step_length

    @cached_property
    def gain(self) -> np.ndarray:
        return tracking_gain(self.models.motion, self.models.lqg).gain

    def step(self, x, b: GaussianBelief, u, rng=None, noise=None):
        """Apply ``u`` to the true state and filter the resulting readings.

        Returns (x_next, belief_next, step_cost, collided); on collision the
        belief is returned unchanged.
        """
        if noise is None:
            noise = draw_noise(rng, len(self.env.landmarks))
        u = np.clip(np.asarray(u, dtype=float), -self.mparams[3], self.mparams[3])
        c = K.step_cost(b.cov, self.cparams)
        xn, mn, Pn, hit = K.sim_step(np.asarray(x, dtype=float), b.mean, b.cov, u, noise, self.mparams,
                                     self.landmarks, self.oparams, self.rects, self.bounds)
        return xn, GaussianBelief(mn, Pn), float(c), bool(hit)

    def step_cost(self, b: GaussianBelief) -> float:
        return float(K.step_cost(b.cov, self.cparams))

    def distance(self, b: GaussianBelief, center: GaussianBelief) -> float:
        return float(K.belief_distance(b.mean, b.cov, center.mean, center.cov, self.dparams))

    def traverse(self, x, b: GaussianBelief, ctrl, target: GaussianBelief, eps: float, cap: int,
                 seed: int, age: int = 0, noise_scale: float = 1.0):
        """Run a controller until the belief enters the ball around ``target``."""
        stab = ctrl.stabilizer if hasattr(ctrl, "stabilizer") else ctrl
        start = getattr(ctrl, "start", stab.target)
        status, cost, steps, xn, mn, Pn = K.traverse(
            np.asarray(x, dtype=float), b.mean, b.cov, int(age), start, stab.target, int(ctrl.n_nominal),
            getattr(ctrl, "gain", stab.gain), stab.gain, target.mean, target.cov, float(eps), int(cap),
            self.mparams, self.landmarks, self.oparams, self.rects, self.bounds, self.dparams,
            self.cparams, int(seed), float(noise_scale))
        return int(status), float(cost), int(steps), xn, GaussianBelief(mn, Pn)
