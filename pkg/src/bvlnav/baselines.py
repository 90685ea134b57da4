"""Comparison planners: uniform-roadmap tree search, one-step graph rollout, plain graph policy."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .beliefs import CostWeights, GaussianBelief, sample_state
from .bvl import PlannerConfig, RoverProblem, TreePlanner
from .controllers import make_node_controller
from .episode import run_episode
from .firm import neighbors_of_belief, policy_successors, progress_candidates
from .simulation import RoverSimulator, derive_rng, kernel_seed

logger = logging.getLogger(__name__)


class FirmInfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class UniformRoadmap:
    targets: np.ndarray
    spacing: float
    goal: GaussianBelief
    epsilon: float
    P_c_ref: np.ndarray
    gain: np.ndarray

    def __len__(self):
        return len(self.targets)


@dataclass(frozen=True, eq=False)
class HeuristicParams:
    step_length: float
    weights: CostWeights
    P_c_ref: np.ndarray

    def __post_init__(self):
        if not self.step_length > 0:
            raise ValueError("step length must be positive")

    @property
    def per_step_cost(self) -> float:
        return self.weights.xi_p * float(np.trace(self.P_c_ref)) + self.weights.xi_T * self.weights.dt


def urm_heuristic(b: GaussianBelief, goal, params: HeuristicParams) -> float:
    """Straight-line travel time to the goal priced at the reference stationary step cost."""
    g = goal.mean if hasattr(goal, "mean") else np.asarray(goal, dtype=float)
    d = float(np.hypot(b.mean[0] - g[0], b.mean[1] - g[1]))
    return d / params.step_length * params.per_step_cost


def build_uniform_roadmap(env, sim: RoverSimulator, spacing: float = 0.5, epsilon: float = 0.05) -> UniformRoadmap:
    m = sim.models
    goal_ctrl = make_node_controller(env.goal, env, m.motion, m.observation, m.lqg, label="goal node")
    xmin, ymin, xmax, ymax = env.bounds
    xs = np.arange(xmin + 0.5 * spacing, xmax, spacing)
    ys = np.arange(ymin + 0.5 * spacing, ymax, spacing)
    pts = [(x, y, env.goal[2]) for y in ys for x in xs if not env.blocked((x, y))]
    pts.append(tuple(env.goal))
    return UniformRoadmap(np.array(pts, dtype=float), spacing, goal_ctrl.center, epsilon, goal_ctrl.P_c, sim.gain)


def urm_problem(roadmap: UniformRoadmap, sim: RoverSimulator, config: PlannerConfig, J_fail: float) -> RoverProblem:
    params = HeuristicParams(sim.step_length, sim.models.weights, roadmap.P_c_ref)
    n = len(roadmap)
    values = np.array([urm_heuristic(GaussianBelief(t, roadmap.P_c_ref), roadmap.goal, params)
                       for t in roadmap.targets])
    covs = np.repeat(roadmap.P_c_ref[None], n, axis=0)
    gains = np.repeat(roadmap.gain[None], n, axis=0)
    return RoverProblem(sim, roadmap.targets, covs, values, gains, roadmap.goal, roadmap.epsilon, J_fail, config,
                        mode=1, heur_scale=params.per_step_cost / params.step_length,
                        grid_spacing=roadmap.spacing, typical_step_cost=params.per_step_cost)


def urm_config(config: PlannerConfig, per_step_cost: float) -> PlannerConfig:
    """Same budget as the bridged planner with Monte Carlo backups and a stay penalty."""
    from dataclasses import replace
    penalty = config.stay_penalty if config.stay_penalty > 0 else 2.0 * per_step_cost
    return replace(config, backup="MC", stay_penalty=penalty)


def urm_pomcp_plan_and_execute(b0: GaussianBelief, roadmap: UniformRoadmap, env, config: PlannerConfig, seed: int,
                               sim: RoverSimulator, J_fail: float = 1e6, max_steps: int = 1000,
                               name: str = "URM-POMCP"):
    params = HeuristicParams(sim.step_length, sim.models.weights, roadmap.P_c_ref)
    cfg = urm_config(config, params.per_step_cost)
    problem = urm_problem(roadmap, sim, cfg, J_fail)
    planner = TreePlanner(problem, cfg, derive_rng(seed, f"planner:{name}"))
    return run_episode(planner, sim, b0, roadmap.goal, roadmap.epsilon, derive_rng(seed, "exec"), max_steps,
                       name=name, env_name=env.name, seed=seed)


# one-step graph rollout


class OgrPlanner:
    """Full-width one-step lookahead over controllers toward nearby graph nodes."""

    def __init__(self, graph, sim: RoverSimulator, rng, k_neighbors: int = 5, n_og: int = 20, cap: int = 600):
        self.graph = graph
        self.sim = sim
        self.rng = rng
        self.k = k_neighbors
        self.n_og = n_og
        self.cap = cap
        self.flags = {}
        self.last_scores = {}
        self.successors = policy_successors(graph)

    def reset(self, b0):
        self.flags = {}

    def score(self, b: GaussianBelief, j: int, noise_scale: float = 1.0) -> float:
        g, s = self.graph, self.sim
        node = g.nodes[j]
        n = K.nominal_steps(b.mean, node.center.mean, s.step_length)
        costs = np.empty(self.n_og)
        ok = np.zeros(self.n_og, dtype=bool)
        for r in range(self.n_og):
            x = sample_state(b, self.rng) if noise_scale > 0 else b.mean.copy()
            status, c, _, _, _, _ = K.traverse(
                x, b.mean, b.cov, 0, b.mean.copy(), node.center.mean, n, s.gain, g.stab_gains[j],
                node.center.mean, node.center.cov, node.epsilon, self.cap, s.mparams, s.landmarks, s.oparams,
                s.rects, s.bounds, s.dparams, s.cparams, kernel_seed(self.rng), noise_scale)
            costs[r] = c
            ok[r] = status == K.STATUS_REACHED
        p = ok.mean()
        mean_cost = costs[ok].mean() if ok.any() else costs.mean()
        return float(mean_cost + p * g.J[j] + (1.0 - p) * g.J_fail)

    def choose(self, b: GaussianBelief, noise_scale: float = 1.0):
        g, s = self.graph, self.sim
        cands = neighbors_of_belief(g, b, self.k, s.env)
        eps = g.nodes[g.goal].epsilon
        cands = progress_candidates(b, cands, g.node_means, g.node_covs, self.successors, eps, s.dparams,
                                    s.plan_rects, s.plan_bounds)
        # results are not kept between decisions
        self.last_scores = {int(j): self.score(b, int(j), noise_scale) for j in cands}
        if not self.last_scores:
            return None
        return min(self.last_scores, key=lambda j: (self.last_scores[j], j))

    def act(self, b):
        j = self.choose(b)
        g, s = self.graph, self.sim
        if j is None:
            self.flags["empty_candidates"] = self.flags.get("empty_candidates", 0) + 1
            j = int(np.argmin(np.hypot(*(g.node_means[:, :2] - b.mean[:2]).T)))
            e = b.mean - g.node_means[j]
            e[2] = K.wrap_angle(e[2])
            return np.clip(-g.stab_gains[j] @ e, -s.mparams[3], s.mparams[3])
        return K.bridge_control(b.mean, g.node_means[j], s.gain, g.stab_gains[j], s.mparams)

    def observe(self, b_next):
        pass


def ogr_step(b: GaussianBelief, graph, env, config: PlannerConfig, rng, sim: RoverSimulator | None = None,
             n_og: int = 20):
    planner = OgrPlanner(graph, sim or RoverSimulator(env, graph.models), rng, config.k_neighbors, n_og,
                         config.rollout_cap)
    return planner.act(b)


def ogr_plan_and_execute(b0, graph, env, config: PlannerConfig, seed: int, sim: RoverSimulator,
                         n_og: int = 20, max_steps: int = 1000, name: str = "OGR"):
    planner = OgrPlanner(graph, sim, derive_rng(seed, f"planner:{name}"), config.k_neighbors, n_og,
                         config.rollout_cap)
    goal = graph.nodes[graph.goal]
    return run_episode(planner, sim, b0, goal.center, goal.epsilon, derive_rng(seed, "exec"), max_steps,
                       name=name, env_name=env.name, seed=seed)


# plain graph policy


class FirmPolicyPlanner:
    """Stabilize to an entry node, then follow the graph policy edge by edge."""

    def __init__(self, graph, sim: RoverSimulator, k_entry: int = 5):
        self.graph = graph
        self.sim = sim
        self.k_entry = k_entry
        self.flags = {}

    def reset(self, b0):
        self.flags = {}
        self._enter(b0)

    def _enter(self, b):
        g = self.graph
        cands = neighbors_of_belief(g, b, self.k_entry, self.sim.env)
        finite = [j for j in cands if g.J[j] < g.J_fail]
        if not finite:
            raise FirmInfeasibleError("no reachable roadmap node with a finite cost-to-go")
        self.node = finite[0]
        self.edge = None
        self.age = 0

    def _arrived(self, b, j) -> bool:
        n = self.graph.nodes[j]
        return self.sim.distance(b, n.center) <= n.epsilon

    def act(self, b):
        g, s = self.graph, self.sim
        if self.edge is not None:
            e = g.edges[self.edge]
            if self._arrived(b, e.target):
                self.node, self.edge, self.age = e.target, None, 0
            elif self.age > min(g.config.edge_cap, e.controller.n_nominal + g.config.stabilize_cap):
                self.flags["edge_timeouts"] = self.flags.get("edge_timeouts", 0) + 1
                self._enter(b)
        if self.edge is None and self._arrived(b, self.node) and g.policy[self.node] >= 0:
            self.edge = int(g.policy[self.node])
            self.age = 0
        if self.edge is None:
            ctrl = g.nodes[self.node].controller
            u = K.control_law(b.mean, 0, ctrl.target, ctrl.target, 0, ctrl.gain, ctrl.gain, s.mparams[3], 1.0)
        else:
            c = g.edges[self.edge].controller
            u = K.control_law(b.mean, self.age, c.start, c.target, c.n_nominal, c.gain, c.stabilizer.gain,
                              s.mparams[3], c.dt)
        self.age += 1
        return u

    def observe(self, b_next):
        pass


def firm_execute(b0, graph, env, seed: int, sim: RoverSimulator | None = None, max_steps: int = 1000,
                 name: str = "FIRM"):
    sim = sim or RoverSimulator(env, graph.models)
    planner = FirmPolicyPlanner(graph, sim)
    goal = graph.nodes[graph.goal]
    return run_episode(planner, sim, b0, goal.center, goal.epsilon, derive_rng(seed, "exec"), max_steps,
                       name=name, env_name=env.name, seed=seed)
