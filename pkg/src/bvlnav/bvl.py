"""Online belief-tree search bridged to the offline roadmap values.

The tree code is written against a small duck-typed *problem* interface so
that the same search runs on the rover (roadmap-bridged), on the uniform
roadmap baseline and on small discrete MDPs used as test oracles:

* ``is_goal(b)``
* ``menu(b) -> list of (target, q_init, is_stay)``
* ``step(x, b, target, rng) -> (x', b', cost, collided)``
* ``rollout(x, b, k, prev_target, rng) -> cost-to-go sample``
* ``distance(b1, b2)`` for belief matching
* ``J_fail`` and ``typical_step_cost``
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .beliefs import GaussianBelief, sample_state
from .firm import policy_successors, progress_candidates
from .simulation import RoverSimulator, kernel_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerConfig:
    N_p: int = 100
    K_sr: int = 1
    eta_q: float | None = None
    eta_w: float = 0.05
    k_neighbors: int = 5
    delta_match: float = 0.1
    rollout_cap: int = 600
    backup: str = "J"
    stay_penalty: float = 0.0
    check_invariants: bool = False
    reuse_tree: bool = True

    def __post_init__(self):
        if self.N_p < 1 or self.K_sr < 1 or self.k_neighbors < 1 or self.rollout_cap < 1:
            raise ValueError("N_p, K_sr, k_neighbors and rollout_cap must be >= 1")
        if self.eta_w < 0 or self.delta_match < 0 or (self.eta_q is not None and self.eta_q < 0):
            raise ValueError("exploration constants and delta_match must be nonnegative")
        if self.backup not in ("J", "MC"):
            raise ValueError("backup must be 'J' or 'MC'")


@dataclass(eq=False)
class ActionStats:
    index: int
    target: object
    Q: float
    N: int = 0
    is_stay: bool = False
    children: list = field(default_factory=list)


@dataclass(eq=False)
class BeliefTreeNode:
    belief: object
    N: int = 0
    J: float = math.inf
    actions: list = field(default_factory=list)


class _Slot:
    """Parent edge holder used for the root (children matched by proximity)."""

    def __init__(self):
        self.children = []


class TreeInvariantError(AssertionError):
    pass


def init_new_node(b, problem) -> BeliefTreeNode:
    """Node whose action values start at the bridged estimate C + J of each target."""
    actions = [ActionStats(i, t, float(q), 0, bool(stay)) for i, (t, q, stay) in enumerate(problem.menu(b))]
    J = min((a.Q for a in actions), default=problem.J_fail)
    return BeliefTreeNode(b, 0, J, actions)


def match_belief_node(slot, b, problem, delta: float):
    """Closest child of ``slot`` within ``delta`` of ``b``, or None."""
    best = None
    best_d = math.inf
    for child in slot.children:
        d = problem.distance(child.belief, b)
        if d <= delta and d < best_d:
            best, best_d = child, d
    return best


def select_action(node: BeliefTreeNode, eta_q: float) -> ActionStats:
    for a in node.actions:
        if a.N == 0:
            return a
    logN = math.log(node.N) if node.N > 0 else 0.0
    best = None
    best_v = math.inf
    for a in node.actions:
        v = a.Q - eta_q * math.sqrt(logN / a.N)
        if v < best_v:
            best, best_v = a, v
    return best


def greedy_action(node: BeliefTreeNode, exclude_stay: bool = False) -> ActionStats | None:
    cands = node.actions
    if exclude_stay:
        moving = [a for a in cands if not a.is_stay and math.isfinite(a.Q)]
        if moving:
            cands = moving
    best = None
    for a in cands:
        if best is None or a.Q < best.Q:
            best = a
    return best


def check_node(node: BeliefTreeNode, tol: float = 1e-9):
    if node.actions:
        m = min(a.Q for a in node.actions)
        if abs(node.J - m) > tol * max(1.0, abs(m)):
            raise TreeInvariantError(f"J = {node.J} differs from min Q = {m}")
    if node.N != sum(a.N for a in node.actions):
        raise TreeInvariantError(f"N = {node.N} but action counts sum to {sum(a.N for a in node.actions)}")


def iter_nodes(slot):
    stack = list(slot.children)
    while stack:
        n = stack.pop()
        yield n
        for a in n.actions:
            stack.extend(a.children)


class BeliefTree:
    """Search tree plus the per-episode bookkeeping for reuse across steps."""

    def __init__(self, problem, config: PlannerConfig, rng):
        self.problem = problem
        self.config = config
        self.rng = rng
        self.eta_q = config.eta_q if config.eta_q is not None else 2.0 * math.sqrt(2.0) * problem.typical_step_cost
        self.slot = _Slot()
        self.flags = {}
        self.touched = []

    def reset(self):
        self.slot = _Slot()

    def simulate(self, x, b, k: int, prev, slot) -> float:
        p, cfg = self.problem, self.config
        if p.is_goal(b):
            return 0.0
        if k > cfg.K_sr:
            return p.rollout(x, b, k, prev, self.rng)
        node = match_belief_node(slot, b, p, cfg.delta_match)
        if node is None:
            slot.children.append(init_new_node(b, p))
            return p.rollout(x, b, k, prev, self.rng)
        if not node.actions:
            return p.J_fail
        a = select_action(node, self.eta_q)
        x2, b2, c, hit = p.step(x, b, a, self.rng)
        if hit:
            R = c + p.J_fail
        else:
            R = c + self.simulate(x2, b2, k + 1, a.target, a)
        a.N += 1
        node.N += 1
        a.Q += (R - a.Q) / a.N
        node.J = min(q.Q for q in node.actions)
        if cfg.check_invariants:
            self.touched.append(node)
        return node.J if cfg.backup == "J" else R

    def root(self, b):
        return match_belief_node(self.slot, b, self.problem, self.config.delta_match)

    def search(self, b) -> ActionStats | None:
        """Run ``N_p`` simulations from states drawn from ``b``; greedy root action."""
        for _ in range(self.config.N_p):
            x = self.problem.sample_state(b, self.rng)
            self.touched = []
            self.simulate(x, b, 0, None, self.slot)
            if self.config.check_invariants:
                for n in self.touched:
                    check_node(n)
        node = self.root(b)
        if node is None or not node.actions:
            self.flags["empty_root"] = self.flags.get("empty_root", 0) + 1
            return None
        return greedy_action(node, exclude_stay=self.config.stay_penalty > 0)

    def advance(self, action: ActionStats | None):
        """Keep the executed action's children as candidates for the next root."""
        if action is None:
            self.slot = _Slot()
        else:
            self.slot = action
            action.children = list(action.children)


def search(tree: BeliefTree, b):
    return tree.search(b)


def heuristic_edge_cost(b: GaussianBelief, node, step_length: float, weights) -> float:
    """ceil(distance / step) steps priced at the current step cost."""
    center = node.center if hasattr(node, "center") else node
    return float(K.heuristic_edge_cost(b.mean, b.cov, center.mean, step_length, weights.params))


class RoverProblem:
    """Rover search problem whose targets are roadmap nodes with values ``J``.

    ``mode`` 0 bridges rollouts into the roadmap values; ``mode`` 1 is the
    heuristic-terminal variant used by the uniform-roadmap baseline.
    """

    def __init__(self, sim: RoverSimulator, targets, target_covs, values, stab_gains, goal: GaussianBelief,
                 eps: float, J_fail: float, config: PlannerConfig, mode: int = 0, heur_scale: float = 0.0,
                 grid_spacing: float = 0.0, typical_step_cost: float | None = None, successors=None):
        self.sim = sim
        self.targets = np.ascontiguousarray(targets, dtype=float)
        self.target_covs = np.ascontiguousarray(target_covs, dtype=float)
        self.values = np.ascontiguousarray(values, dtype=float)
        self.stab_gains = np.ascontiguousarray(stab_gains, dtype=float)
        self.goal = goal
        self.eps = float(eps)
        self.J_fail = float(J_fail)
        self.config = config
        self.mode = mode
        self.heur_scale = heur_scale
        self.grid_spacing = grid_spacing
        if typical_step_cost is None:
            typical_step_cost = float(np.median([K.step_cost(P, sim.cparams) for P in self.target_covs]))
        self.typical_step_cost = typical_step_cost
        self.gain = sim.gain
        self.step_len = sim.step_length
        self.successors = None if successors is None else np.asarray(successors, dtype=np.int64)

    def sample_state(self, b, rng):
        return sample_state(b, rng)

    def is_goal(self, b) -> bool:
        return K.belief_distance(b.mean, b.cov, self.goal.mean, self.goal.cov, self.sim.dparams) <= self.eps

    def distance(self, b1, b2) -> float:
        return K.belief_distance(b1.mean, b1.cov, b2.mean, b2.cov, self.sim.dparams)

    def neighbors(self, b):
        idx, _ = K.visible_neighbors(b.mean, b.cov, self.targets, self.target_covs, self.sim.dparams,
                                     self.config.k_neighbors, self.sim.plan_rects, self.sim.plan_bounds)
        return idx

    def _bridge_menu(self, b, idx):
        return progress_candidates(b, idx, self.targets, self.target_covs, self.successors, self.eps,
                                   self.sim.dparams, self.sim.plan_rects, self.sim.plan_bounds)

    def menu(self, b):
        idx = self.neighbors(b)
        if self.successors is not None and len(idx):
            idx = self._bridge_menu(b, idx)
        stay = -1
        if self.mode == 1 and len(idx):
            d = np.hypot(*(self.targets[idx, :2] - b.mean[:2]).T)
            stay = int(idx[np.argmin(d)])
        out = []
        for j in idx:
            c = K.heuristic_edge_cost(b.mean, b.cov, self.targets[j], self.step_len, self.sim.cparams)
            out.append((int(j), c + self.values[j], int(j) == stay))
        return out

    def control(self, b, j: int):
        return K.bridge_control(b.mean, self.targets[j], self.gain, self.stab_gains[j], self.sim.mparams)

    def step(self, x, b, action, rng):
        j = action.target
        x2, b2, c, hit = self.sim.step(x, b, self.control(b, j), rng)
        if action.is_stay:
            c += self.config.stay_penalty
        return x2, b2, c, hit

    def rollout(self, x, b, k, prev, rng) -> float:
        s = self.sim
        return float(K.rollout(
            np.asarray(x, dtype=float), b.mean, b.cov, int(k), int(self.config.K_sr),
            -1 if prev is None else int(prev), self.targets, self.target_covs, self.values, self.stab_gains,
            self.gain, int(self.config.k_neighbors), float(self.config.eta_w), self.J_fail,
            int(self.config.rollout_cap), self.goal.mean, self.goal.cov, self.eps, int(self.mode),
            float(self.heur_scale), s.mparams, s.landmarks, s.oparams, s.rects, s.bounds, s.plan_rects,
            s.plan_bounds, s.dparams,
            s.cparams, kernel_seed(rng)))

    def fallback_control(self, b):
        d = np.hypot(*(self.targets[:, :2] - b.mean[:2]).T)
        j = int(np.argmin(d))
        e = b.mean - self.targets[j]
        e[2] = K.wrap_angle(e[2])
        return np.clip(-self.stab_gains[j] @ e, -self.sim.mparams[3], self.sim.mparams[3])


def bridged_problem(graph, sim: RoverSimulator, config: PlannerConfig) -> RoverProblem:
    if not graph.is_valued:
        raise ValueError("graph must be valued before online search")
    goal = graph.nodes[graph.goal]
    succ = policy_successors(graph)
    return RoverProblem(sim, graph.node_means, graph.node_covs, graph.J, graph.stab_gains, goal.center,
                        goal.epsilon, graph.J_fail, config, mode=0, successors=succ)


class TreePlanner:
    """Execute-replan adapter: one search per executed step, tree kept across steps."""

    def __init__(self, problem, config: PlannerConfig, rng, reuse: bool | None = None):
        self.problem = problem
        self.config = config
        self.tree = BeliefTree(problem, config, rng)
        self.reuse = config.reuse_tree if reuse is None else reuse
        self.last = None

    @property
    def flags(self):
        return self.tree.flags

    def reset(self, b0):
        self.tree.reset()
        self.tree.flags.clear()
        self.last = None

    def act(self, b):
        a = self.tree.search(b)
        self.last = a
        if a is None:
            return self.problem.fallback_control(b)
        return self.problem.control(b, a.target)

    def observe(self, b_next):
        if self.reuse:
            self.tree.advance(self.last)
        else:
            self.tree.reset()


def plan_and_execute(b0: GaussianBelief, graph, env, config: PlannerConfig, seed: int, max_steps: int = 1000,
                     sim: RoverSimulator | None = None, name: str = "BVL"):
    """Search, execute one control, observe and repeat until goal/collision/cap."""
    from .episode import run_episode
    from .simulation import derive_rng

    sim = sim or RoverSimulator(env, graph.models)
    problem = bridged_problem(graph, sim, config)
    planner = TreePlanner(problem, config, derive_rng(seed, f"planner:{name}"))
    goal = graph.nodes[graph.goal]
    return run_episode(planner, sim, b0, goal.center, goal.epsilon, derive_rng(seed, "exec"), max_steps,
                       name=name, env_name=env.name, seed=seed)
