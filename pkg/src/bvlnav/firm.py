"""Offline belief roadmap: sampling, Monte Carlo edge evaluation, value iteration."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import _kernels as K
from .beliefs import GaussianBelief, sample_state
from .controllers import (EdgeController, EdgeRejectedError, StationaryLqg, SynthesisError,
                          make_edge_controller, make_node_controller)
from .simulation import Models, RoverSimulator, derive_rng, kernel_seed
from .world import InfeasibleEnvironmentError, sample_free_state

logger = logging.getLogger(__name__)

GRAPH_SCHEMA_VERSION = 1
FAIL = "FAIL"


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FirmConfig:
    n_nodes: int = 300
    epsilon: float = 0.05
    connect_radius: float = 4.0
    max_neighbors: int = 10
    n_mc: int = 25
    edge_cap: int = 600
    stabilize_cap: int = 400
    J_fail: float = 1e6
    max_node_attempts: int = 200
    node_heading: str = "goal"
    min_separation: float = 0.3

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if self.n_mc < 1 or self.epsilon <= 0 or self.connect_radius <= 0:
            raise ValueError("n_mc, epsilon and connect_radius must be positive")
        if self.node_heading not in ("goal", "uniform"):
            raise ValueError("node_heading must be 'goal' or 'uniform'")


@dataclass(eq=False)
class FirmNode:
    id: int
    center: GaussianBelief
    epsilon: float
    controller: StationaryLqg | None = field(default=None, repr=False)


@dataclass(eq=False)
class FirmEdge:
    id: int
    source: int
    target: int
    controller: EdgeController | None = field(default=None, repr=False)
    cost: float = 0.0
    p_success: float = 0.0
    mc_samples: int = 0

    @property
    def p_fail(self) -> float:
        return 1.0 - self.p_success

    @property
    def outcome_probs(self) -> dict:
        return {self.target: self.p_success, FAIL: self.p_fail}


@dataclass(eq=False)
class FirmGraph:
    nodes: list
    edges: list
    goal: int = 0
    J_fail: float = 1e6
    J: np.ndarray | None = None
    policy: np.ndarray | None = None
    env_digest: str = ""
    models: Models = field(default_factory=Models)
    config: FirmConfig = field(default_factory=FirmConfig)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def is_valued(self) -> bool:
        return self.J is not None

    @cached_property
    def node_means(self) -> np.ndarray:
        return np.array([n.center.mean for n in self.nodes]).reshape(-1, 3)

    @cached_property
    def node_covs(self) -> np.ndarray:
        return np.array([n.center.cov for n in self.nodes]).reshape(-1, 3, 3)

    @cached_property
    def stab_gains(self) -> np.ndarray:
        return np.array([n.controller.gain for n in self.nodes]).reshape(-1, 3, 3)

    @cached_property
    def out_edges(self) -> list:
        out = [[] for _ in self.nodes]
        for e in self.edges:
            out[e.source].append(e.id)
        return out

    def edge_arrays(self):
        src = np.array([e.source for e in self.edges], dtype=np.int64)
        dst = np.array([e.target for e in self.edges], dtype=np.int64)
        cost = np.array([e.cost for e in self.edges], dtype=float)
        p = np.array([e.p_success for e in self.edges], dtype=float)
        return src, dst, cost, p

    def value(self, i: int) -> float:
        return float(self.J[i]) if self.J is not None else self.J_fail


# construction


def build_graph(env, n_nodes: int, connect_radius: float, rng, models: Models | None = None,
                config: FirmConfig | None = None) -> FirmGraph:
    """Sample nodes (goal first), synthesize controllers and connect neighbors.

    The returned graph is unvalued; see :func:`evaluate_graph` and
    :func:`value_iteration`.
    """
    models = models or Models()
    config = replace(config or FirmConfig(), n_nodes=n_nodes, connect_radius=connect_radius)
    motion, observation = models.motion, models.observation
    try:
        goal_ctrl = make_node_controller(env.goal, env, motion, observation, models.lqg, label="goal node")
    except SynthesisError as exc:
        raise InfeasibleEnvironmentError(f"goal node cannot be stabilized: {exc}") from None
    nodes = [FirmNode(0, goal_ctrl.center, config.epsilon, goal_ctrl)]
    while len(nodes) < n_nodes:
        for _ in range(config.max_node_attempts):
            v = sample_free_state(env, rng)
            if env.blocked(v):
                continue
            if np.min(np.hypot(*(np.array([n.center.mean[:2] for n in nodes]) - v[:2]).T)) < config.min_separation:
                continue
            if config.node_heading == "goal":
                # a shared heading keeps neighbor ranking driven by position
                v[2] = env.goal[2]
            try:
                ctrl = make_node_controller(v, env, motion, observation, models.lqg, label=f"node {len(nodes)}")
                break
            except SynthesisError:
                continue
        else:
            raise InfeasibleEnvironmentError(
                f"no stabilizable node found in {config.max_node_attempts} samples")
        nodes.append(FirmNode(len(nodes), ctrl.center, config.epsilon, ctrl))
    means = np.array([n.center.mean for n in nodes])
    pairs = set()
    for i in range(len(nodes)):
        d = np.hypot(*(means[:, :2] - means[i, :2]).T)
        order = np.argsort(d, kind="stable")
        taken = 0
        for j in order:
            if j == i:
                continue
            if d[j] > connect_radius or taken >= config.max_neighbors:
                break
            if env.blocked(means[i], means[j]):
                continue
            pairs.add((i, int(j)))
            pairs.add((int(j), i))
            taken += 1
    sim = RoverSimulator(env, models)
    gain = sim.gain
    edges = []
    for i, j in sorted(pairs):
        try:
            ctrl = make_edge_controller(means[i], means[j], env, motion, nodes[j].controller, gain)
        except EdgeRejectedError:
            continue
        edges.append(FirmEdge(len(edges), i, j, ctrl))
    return FirmGraph(nodes, edges, 0, config.J_fail, env_digest=env.digest, models=models, config=config)


def evaluate_edge(graph: FirmGraph, edge: FirmEdge, n_mc: int, rng, sim: RoverSimulator,
                  noise_scale: float = 1.0):
    """Monte Carlo cost and success probability of one edge controller.

    Each run starts at the source node's center belief with a true state
    drawn from it and ends on entering the target ball (success), on
    collision or at the step cap (failure).
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    src = graph.nodes[edge.source]
    dst = graph.nodes[edge.target]
    cap = min(graph.config.edge_cap, edge.controller.n_nominal + graph.config.stabilize_cap)
    costs = np.empty(n_mc)
    ok = np.zeros(n_mc, dtype=bool)
    for r in range(n_mc):
        x0 = sample_state(src.center, rng) if noise_scale > 0 else src.center.mean.copy()
        status, cost, _, _, _ = sim.traverse(x0, src.center, edge.controller, dst.center, dst.epsilon, cap,
                                             kernel_seed(rng), noise_scale=noise_scale)
        costs[r] = cost
        ok[r] = status == K.STATUS_REACHED
    p = float(ok.mean())
    cost = float(costs[ok].mean()) if ok.any() else float(costs.mean())
    return cost, {edge.target: p, FAIL: 1.0 - p}


def evaluate_graph(graph: FirmGraph, env, seed: int, n_mc: int | None = None,
                   noise_scale: float = 1.0) -> FirmGraph:
    """Evaluate every edge in place; edge ``i`` uses the stream labelled ``edge:i``."""
    n_mc = n_mc or graph.config.n_mc
    sim = RoverSimulator(env, graph.models)
    for e in graph.edges:
        rng = derive_rng(seed, f"edge:{e.id}")
        cost, probs = evaluate_edge(graph, e, n_mc, rng, sim, noise_scale)
        e.cost = cost
        e.p_success = probs[e.target]
        e.mc_samples = n_mc
    return graph


# value iteration


def _q_values(J, src, dst, cost, p, J_fail):
    return cost + p * J[dst] + (1.0 - p) * J_fail


def _greedy(q, src, n, current=None, tol=0.0):
    """Per-node argmin over outgoing edges, ties to the lowest edge id."""
    best = np.full(n, np.inf)
    arg = np.full(n, -1, dtype=np.int64)
    for e in np.lexsort((np.arange(len(q)), q, src)):
        s = src[e]
        if arg[s] < 0:
            best[s] = q[e]
            arg[s] = e
    if current is not None:
        # keep the current choice unless the greedy one is strictly better
        for s in range(n):
            c = current[s]
            if c >= 0 and q[c] <= best[s] + tol:
                best[s] = q[c]
                arg[s] = c
    return best, arg


def evaluate_graph_policy(policy, goal, src, dst, cost, p, J_fail) -> np.ndarray:
    """Exact cost-to-go of a stationary graph policy (-1 means give up).

    Nodes whose policy chain never reaches the goal get ``J_fail``; values
    are clamped at ``J_fail``.
    """
    n = len(policy)
    J = np.full(n, np.nan)
    J[goal] = 0.0
    for s in range(n):
        chain = []
        seen = set()
        v = s
        while np.isnan(J[v]):
            if policy[v] < 0 or v in seen:
                J[v] = J_fail
                break
            seen.add(v)
            chain.append(v)
            v = dst[policy[v]]
        for v in reversed(chain):
            if not np.isnan(J[v]):
                continue
            e = policy[v]
            J[v] = min(J_fail, cost[e] + p[e] * J[dst[e]] + (1.0 - p[e]) * J_fail)
    return J


def value_iteration_arrays(n, goal, src, dst, cost, p, J_fail, tol=1e-9, max_sweeps=100_000):
    src, dst = np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)
    cost, p = np.asarray(cost, dtype=float), np.asarray(p, dtype=float)
    J = np.full(n, float(J_fail))
    J[goal] = 0.0
    for _ in range(max_sweeps):
        q = _q_values(J, src, dst, cost, p, J_fail)
        best = np.full(n, np.inf)
        np.minimum.at(best, src, q)
        Jn = np.minimum(best, J_fail)
        Jn[goal] = 0.0
        delta = np.max(np.abs(Jn - J)) if n else 0.0
        J = Jn
        if delta < tol:
            break
    # polish with exact policy evaluation and improvement
    _, policy = _greedy(_q_values(J, src, dst, cost, p, J_fail), src, n)
    policy[goal] = -1
    for _ in range(n + 1):
        J = evaluate_graph_policy(policy, goal, src, dst, cost, p, J_fail)
        _, improved = _greedy(_q_values(J, src, dst, cost, p, J_fail), src, n, policy, tol=1e-12 * max(1.0, J_fail))
        improved[goal] = -1
        if np.array_equal(improved, policy):
            break
        policy = improved
    J = evaluate_graph_policy(policy, goal, src, dst, cost, p, J_fail)
    policy = np.where(J >= J_fail, -1, policy)
    policy[goal] = -1
    J = np.where(policy < 0, J_fail, J)
    J[goal] = 0.0
    return J, policy


def value_iteration(graph: FirmGraph, J_fail: float | None = None):
    """Bellman backups to convergence followed by an exact policy-evaluation polish.

    Returns (J, policy) as arrays indexed by node id; ``policy[i]`` is the
    chosen edge id or -1 (goal, or no path better than giving up).
    """
    J_fail = graph.J_fail if J_fail is None else float(J_fail)
    src, dst, cost, p = graph.edge_arrays()
    return value_iteration_arrays(graph.n_nodes, graph.goal, src, dst, cost, p, J_fail)


def solve_graph(graph: FirmGraph, J_fail: float | None = None) -> FirmGraph:
    if J_fail is not None:
        graph.J_fail = float(J_fail)
    graph.J, graph.policy = value_iteration(graph)
    return graph


def bellman_residual(graph: FirmGraph) -> float:
    src, dst, cost, p = graph.edge_arrays()
    q = _q_values(graph.J, src, dst, cost, p, graph.J_fail)
    best = np.full(graph.n_nodes, np.inf)
    np.minimum.at(best, src, q)
    target = np.minimum(best, graph.J_fail)
    target[graph.goal] = 0.0
    return float(np.max(np.abs(target - graph.J)))


def build_firm(env, config: FirmConfig, models: Models, seed: int) -> FirmGraph:
    """Build, evaluate and value a graph from one seed."""
    graph = build_graph(env, config.n_nodes, config.connect_radius, derive_rng(seed, "firm:nodes"), models, config)
    evaluate_graph(graph, env, seed)
    return solve_graph(graph)


# queries


def neighbors_of_belief(graph: FirmGraph, b: GaussianBelief, k: int, env) -> list:
    """Up to ``k`` nearest nodes (belief metric) reachable by a free straight segment."""
    idx, _ = K.visible_neighbors(b.mean, b.cov, graph.node_means, graph.node_covs,
                                 graph.models.metric.params, int(k), env.plan_rects, env.plan_bounds)
    return [int(i) for i in idx]


def progress_candidates(b: GaussianBelief, idx, means, covs, successors, eps: float, dparams,
                        plan_rects, plan_bounds) -> np.ndarray:
    """Drop candidates whose ball already holds ``b`` and add their visible policy successors.

    Steering to a node that is already reached makes no progress, and the
    next node along the graph policy may lie outside the nearest few.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if not len(idx):
        return idx
    d = K.belief_distance_batch(b.mean, b.cov, means[idx], covs[idx], dparams)
    keep = [int(j) for j in idx[d > eps]]
    for i in idx:
        nxt = int(successors[i])
        if nxt < 0 or nxt in keep or nxt in idx:
            continue
        if not K.segment_collides(b.mean[0], b.mean[1], means[nxt, 0], means[nxt, 1], plan_rects, plan_bounds):
            keep.append(nxt)
    return np.array(keep, dtype=np.int64) if keep else idx


def policy_successors(graph: FirmGraph) -> np.ndarray:
    return np.array([graph.edges[e].target if e >= 0 else -1 for e in graph.policy], dtype=np.int64)


# serialization


def _node_doc(n: FirmNode) -> dict:
    c = n.controller
    return {"id": n.id, "mean": n.center.mean.tolist(), "P_c": n.center.cov.tolist(),
            "epsilon": n.epsilon, "gain": c.gain.tolist(), "kalman_gain": c.kalman_gain.tolist(),
            "spectral_radius": c.spectral_radius}


def _edge_doc(e: FirmEdge) -> dict:
    c = e.controller
    return {"id": e.id, "source": e.source, "target": e.target, "cost": e.cost,
            "p_success": e.p_success, "mc_samples": e.mc_samples,
            "controller": {"start": c.start.tolist(), "target": c.target.tolist(),
                           "n_nominal": c.n_nominal, "dt": c.dt, "gain": c.gain.tolist()}}


def serialize_graph(graph: FirmGraph) -> dict:
    return {
        "schema_version": GRAPH_SCHEMA_VERSION,
        "env_digest": graph.env_digest,
        "goal": graph.goal,
        "J_fail": graph.J_fail,
        "models": graph.models.to_dict(),
        "config": vars(graph.config).copy(),
        "nodes": [_node_doc(n) for n in graph.nodes],
        "edges": [_edge_doc(e) for e in graph.edges],
        "J": None if graph.J is None else graph.J.tolist(),
        "policy": None if graph.policy is None else graph.policy.tolist(),
    }


def deserialize_graph(doc: dict) -> FirmGraph:
    if not isinstance(doc, dict) or doc.get("schema_version") != GRAPH_SCHEMA_VERSION:
        found = doc.get("schema_version") if isinstance(doc, dict) else None
        raise GraphFormatError(f"unsupported graph schema {found!r}")
    try:
        nodes = []
        for nd in doc["nodes"]:
            mean, P_c = np.array(nd["mean"], dtype=float), np.array(nd["P_c"], dtype=float)
            ctrl = StationaryLqg(mean, np.array(nd["gain"]), np.array(nd["kalman_gain"]).reshape(3, -1),
                                 P_c, float(nd["spectral_radius"]))
            nodes.append(FirmNode(int(nd["id"]), GaussianBelief(mean, P_c), float(nd["epsilon"]), ctrl))
        edges = []
        for ed in doc["edges"]:
            c = ed["controller"]
            ctrl = EdgeController(np.array(c["start"]), np.array(c["target"]), int(c["n_nominal"]),
                                  float(c["dt"]), np.array(c["gain"]), nodes[int(ed["target"])].controller)
            edges.append(FirmEdge(int(ed["id"]), int(ed["source"]), int(ed["target"]), ctrl,
                                  float(ed["cost"]), float(ed["p_success"]), int(ed["mc_samples"])))
        J = None if doc["J"] is None else np.array(doc["J"], dtype=float)
        policy = None if doc["policy"] is None else np.array(doc["policy"], dtype=np.int64)
        return FirmGraph(nodes, edges, int(doc["goal"]), float(doc["J_fail"]), J, policy,
                         doc["env_digest"], Models.from_dict(doc["models"]), FirmConfig(**doc["config"]))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise GraphFormatError(f"malformed graph document: {exc}") from None


def save_graph(graph: FirmGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(serialize_graph(graph), fh, sort_keys=True)
        fh.write("\n")


def load_graph(path, env=None) -> FirmGraph:
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: {exc}") from None
    graph = deserialize_graph(doc)
    if env is not None and graph.env_digest != env.digest:
        raise GraphFormatError(f"{path}: graph was built for a different environment")
    return graph
