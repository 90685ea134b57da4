"""Brute-force ground truth on small discrete problems.

Everything here is exact linear algebra or exhaustive search over a finite
model, used to check the graph solver and the tree search on instances small
enough to solve outright.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

MAX_STATES = 200
MAX_POLICIES = 1_000_000
MAX_EXPECTIMAX_BRANCHES = 10_000_000


class OracleBudgetError(ValueError):
    """Instance too large for exhaustive treatment."""


@dataclass(frozen=True, eq=False)
class DiscreteBeliefMdp:
    """Finite belief-state MDP with absorbing goal and failure sets.

    ``transitions[s][a]`` is a length-``n`` probability vector and
    ``costs[s][a]`` the cost of taking action ``a`` in ``s``.  Terminal states
    carry no actions.
    """

    transitions: tuple
    costs: tuple
    goal: frozenset
    fail: frozenset
    action_names: tuple = field(default=())
    name: str = ""

    def __post_init__(self):
        n = len(self.transitions)
        if not 0 < n <= MAX_STATES:
            raise OracleBudgetError(f"{n} states; the oracle handles 1..{MAX_STATES}")
        if len(self.costs) != n:
            raise ValueError("costs and transitions disagree on the number of states")
        if not self.goal:
            raise ValueError("at least one goal state is required")
        if self.goal & self.fail:
            raise ValueError("goal and failure sets overlap")
        for s in range(n):
            rows, cs = self.transitions[s], self.costs[s]
            if len(rows) != len(cs):
                raise ValueError(f"state {s}: {len(rows)} transition rows but {len(cs)} costs")
            if s in self.terminals:
                if rows:
                    raise ValueError(f"terminal state {s} must be absorbing (no actions)")
                continue
            if not rows:
                raise ValueError(f"non-terminal state {s} has no actions")
            for a, row in enumerate(rows):
                row = np.asarray(row, dtype=float)
                if row.shape != (n,) or np.any(row < 0) or abs(row.sum() - 1.0) > 1e-12:
                    raise ValueError(f"state {s} action {a}: not a probability vector over {n} states")
                if cs[a] < 0:
                    raise ValueError(f"state {s} action {a}: negative cost")

    @property
    def n_states(self) -> int:
        return len(self.transitions)

    @property
    def terminals(self) -> frozenset:
        return self.goal | self.fail

    @property
    def nonterminal(self) -> list:
        return [s for s in range(self.n_states) if s not in self.terminals]

    def n_actions(self, s: int) -> int:
        return len(self.transitions[s])

    @property
    def n_policies(self) -> int:
        return math.prod(self.n_actions(s) for s in self.nonterminal)

    def policies(self):
        """Every deterministic stationary policy, terminals mapped to -1."""
        free = self.nonterminal
        for choice in itertools.product(*(range(self.n_actions(s)) for s in free)):
            pol = [-1] * self.n_states
            for s, a in zip(free, choice):
                pol[s] = a
            yield tuple(pol)

    def P(self, s: int, a: int) -> np.ndarray:
        return np.asarray(self.transitions[s][a], dtype=float)

    def to_dict(self) -> dict:
        return {"name": self.name, "n_states": self.n_states,
                "goal": sorted(self.goal), "fail": sorted(self.fail),
                "actions": [[{"cost": float(c), "next": {str(j): float(p) for j, p in enumerate(row) if p > 0},
                              **({"name": self.action_names[s][a]} if self.action_names else {})}
                             for a, (row, c) in enumerate(zip(self.transitions[s], self.costs[s]))]
                            for s in range(self.n_states)]}

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscreteBeliefMdp":
        n = int(doc["n_states"])
        trans, costs, names = [], [], []
        for acts in doc["actions"]:
            rows, cs, ns = [], [], []
            for a in acts:
                row = np.zeros(n)
                for j, p in a["next"].items():
                    row[int(j)] = float(p)
                rows.append(tuple(row))
                cs.append(float(a["cost"]))
                ns.append(a.get("name", ""))
            trans.append(tuple(rows))
            costs.append(tuple(cs))
            names.append(tuple(ns))
        has_names = any(any(ns) for ns in names)
        return cls(tuple(trans), tuple(costs), frozenset(doc["goal"]), frozenset(doc.get("fail", [])),
                   tuple(names) if has_names else (), doc.get("name", ""))


def load_mdp(path) -> DiscreteBeliefMdp:
    with open(path) as fh:
        return DiscreteBeliefMdp.from_dict(json.load(fh))


def save_mdp(mdp: DiscreteBeliefMdp, path):
    with open(path, "w") as fh:
        json.dump(mdp.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _check_policy(mdp: DiscreteBeliefMdp, policy):
    policy = tuple(int(a) for a in policy)
    if len(policy) != mdp.n_states:
        raise ValueError("policy length differs from the number of states")
    for s in mdp.nonterminal:
        if not 0 <= policy[s] < mdp.n_actions(s):
            raise ValueError(f"policy undefined at non-terminal state {s}")
    return policy


def _chain(mdp: DiscreteBeliefMdp, policies):
    """Stacked transition matrices and cost vectors, terminals self-absorbing."""
    n = mdp.n_states
    B = len(policies)
    P = np.zeros((B, n, n))
    c = np.zeros((B, n))
    for t in mdp.terminals:
        P[:, t, t] = 1.0
    free = mdp.nonterminal
    table = [np.array([mdp.P(s, a) for a in range(mdp.n_actions(s))]) for s in range(n)]
    ctab = [np.asarray(mdp.costs[s], dtype=float) for s in range(n)]
    pol = np.asarray(policies, dtype=np.int64)
    for s in free:
        P[:, s, :] = table[s][pol[:, s]]
        c[:, s] = ctab[s][pol[:, s]]
    return P, c


def _can_reach(P: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Batched graph reachability of ``target`` states along positive-probability moves."""
    A = (P > 0).astype(np.float64)
    r = np.broadcast_to(target, P.shape[:2]).astype(bool).copy()
    for _ in range(P.shape[1]):
        r_next = r | ((A @ r[..., None].astype(np.float64))[..., 0] > 0)
        if np.array_equal(r_next, r):
            break
        r = r_next
    return r


def _indicator(n, states):
    v = np.zeros(n, dtype=bool)
    v[list(states)] = True
    return v


def _policy_costs(mdp, P, c, J_fail):
    n = mdp.n_states
    term = _indicator(n, mdp.terminals)
    dead = ~_can_reach(P, term)
    improper = _can_reach(P, dead)
    fail = _indicator(n, mdp.fail)
    goal = _indicator(n, mdp.goal)
    pinned = improper | term
    value = np.where(fail | improper, float(J_fail), 0.0)
    value = np.where(goal, 0.0, value)
    eye = np.eye(n)
    A = np.where(pinned[..., None], eye, eye - P)
    rhs = np.where(pinned, value, c)
    return np.linalg.solve(A, rhs[..., None])[..., 0]


def _policy_risks(mdp, P):
    n = mdp.n_states
    goal = _indicator(n, mdp.goal)
    hopeless = ~_can_reach(P, goal)
    pinned = goal | hopeless | _indicator(n, mdp.fail)
    value = np.where(goal, 0.0, 1.0)
    eye = np.eye(n)
    A = np.where(pinned[..., None], eye, eye - P)
    rhs = np.where(pinned, value, 0.0)
    rho = np.linalg.solve(A, np.broadcast_to(rhs, P.shape[:2])[..., None])[..., 0]
    return np.clip(rho, 0.0, 1.0)


def exact_policy_cost(mdp: DiscreteBeliefMdp, policy, J_fail: float) -> np.ndarray:
    """Undiscounted cost-to-go of a stationary policy.

    Goal states are pinned at 0 and failure states at ``J_fail``.  A state
    from which the policy has a positive probability of never terminating is
    also given ``J_fail``.
    """
    pol = _check_policy(mdp, policy)
    P, c = _chain(mdp, [pol])
    return _policy_costs(mdp, P, c, J_fail)[0]


def exact_policy_risk(mdp: DiscreteBeliefMdp, policy) -> np.ndarray:
    """Probability of not reaching the goal (failure, or never terminating)."""
    pol = _check_policy(mdp, policy)
    P, _ = _chain(mdp, [pol])
    return _policy_risks(mdp, P)[0]


@dataclass
class EnumerationResult:
    best_cost: tuple
    best_risk: tuple
    cost_ties: list
    risk_ties: list
    J: np.ndarray
    rho: np.ndarray
    n_policies: int

    @property
    def cost_argmin_within_risk_argmin(self) -> bool:
        return set(self.cost_ties) <= set(self.risk_ties)


def _score(values: np.ndarray, start):
    return values[:, start] if start is not None else values.sum(axis=1)


def enumerate_optimal(mdp: DiscreteBeliefMdp, J_fail: float, start: int | None = None,
                      rtol: float = 1e-9, batch: int = 4096,
                      max_policies: int = MAX_POLICIES) -> EnumerationResult:
    """Evaluate every deterministic stationary policy exactly.

    The objective is the value at ``start`` or, by default, the sum over all
    states (whose minimizers are the policies optimal at every state at once).
    Ties are collected with relative tolerance ``rtol``.
    """
    total = mdp.n_policies
    if total > max_policies:
        raise OracleBudgetError(f"{total} policies exceed the enumeration budget of {max_policies}")
    pols, Js, rhos = [], [], []
    it = mdp.policies()
    while True:
        chunk = list(itertools.islice(it, batch))
        if not chunk:
            break
        P, c = _chain(mdp, chunk)
        Js.append(_policy_costs(mdp, P, c, J_fail))
        rhos.append(_policy_risks(mdp, P))
        pols.extend(chunk)
    J = np.concatenate(Js)
    rho = np.concatenate(rhos)
    cost = _score(J, start)
    risk = _score(rho, start)
    cmin, rmin = cost.min(), risk.min()
    cost_ties = [pols[i] for i in np.flatnonzero(cost <= cmin + rtol * max(1.0, abs(cmin)))]
    risk_ties = [pols[i] for i in np.flatnonzero(risk <= rmin + rtol * max(1.0, abs(rmin)))]
    ic = pols.index(cost_ties[0])
    # risk-optimal representative: the cheapest among the least risky
    risk_idx = [pols.index(p) for p in risk_ties]
    ir = min(risk_idx, key=lambda i: (cost[i], i))
    return EnumerationResult(pols[ic], pols[ir], cost_ties, risk_ties, J[ic], rho[ir], total)


def lemma_gap(mdp: DiscreteBeliefMdp, policy, J_fail: float) -> float:
    """max over states of |J(s)/J_fail - rho(s)| for ``policy``."""
    J = exact_policy_cost(mdp, policy, J_fail)
    rho = exact_policy_risk(mdp, policy)
    return float(np.max(np.abs(J / J_fail - rho)))


def expectimax_action(mdp: DiscreteBeliefMdp, s0: int, depth: int, J_fail: float,
                      terminal_policy=None, budget: int = MAX_EXPECTIMAX_BRANCHES):
    """Exact depth-limited min-expectation search from state ``s0``.

    Leaves at the depth limit take the exact cost-to-go of ``terminal_policy``
    (action 0 everywhere by default).  Returns ``(action, value, q_values)``.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    branch = max(mdp.n_actions(s) * max(1, int(np.count_nonzero([mdp.P(s, a) for a in range(mdp.n_actions(s))],
                                                                    axis=1).max()))
                 for s in mdp.nonterminal)
    if float(branch) ** depth > budget:
        raise OracleBudgetError(f"branching {branch}^{depth} exceeds the expectimax budget {budget}")
    if terminal_policy is None:
        terminal_policy = [0 if s not in mdp.terminals else -1 for s in range(mdp.n_states)]
    leaf = exact_policy_cost(mdp, terminal_policy, J_fail)
    memo = {}

    def value(s, d):
        if s in mdp.goal:
            return 0.0
        if s in mdp.fail:
            return float(J_fail)
        if d == 0:
            return float(leaf[s])
        key = (s, d)
        if key not in memo:
            memo[key] = min(q_value(s, a, d) for a in range(mdp.n_actions(s)))
        return memo[key]

    def q_value(s, a, d):
        row = mdp.P(s, a)
        nxt = np.flatnonzero(row)
        return float(mdp.costs[s][a] + sum(row[j] * value(int(j), d - 1) for j in nxt))

    if s0 in mdp.terminals:
        raise ValueError("expectimax root must be a non-terminal state")
    qs = np.array([q_value(s0, a, depth) for a in range(mdp.n_actions(s0))])
    a_star = int(np.argmin(qs))
    return a_star, float(qs[a_star]), qs


def simulate_policy(mdp: DiscreteBeliefMdp, policy, s0: int, n_episodes: int, J_fail: float, rng,
                    max_steps: int = 10_000):
    """Vectorized Monte Carlo of ``policy``; returns per-episode costs and goal flags."""
    pol = _check_policy(mdp, policy)
    P, c = _chain(mdp, [pol])
    P, c = P[0], c[0]
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    s = np.full(n_episodes, int(s0))
    cost = np.zeros(n_episodes)
    term = _indicator(mdp.n_states, mdp.terminals)
    for _ in range(max_steps):
        live = ~term[s]
        if not live.any():
            break
        idx = np.flatnonzero(live)
        cost[idx] += c[s[idx]]
        u = rng.random(len(idx))
        s[idx] = (u[:, None] > cdf[s[idx]]).sum(axis=1)
    goal = _indicator(mdp.n_states, mdp.goal)[s]
    failed = _indicator(mdp.n_states, mdp.fail)[s]
    cost = cost + np.where(failed | ~term[s], float(J_fail), 0.0)
    return cost, goal


# graphs as MDPs


def graph_to_mdp(n: int, goal: int, src, dst, cost, p_success, name: str = "graph") -> DiscreteBeliefMdp:
    """Node graph with success/failure edges as an MDP with one extra failure state.

    Each edge is an action: ``cost`` is paid, the target is reached with
    ``p_success`` and the failure state otherwise.  Nodes without out-edges
    get a single zero-cost action into the failure state.
    """
    F = n
    m = n + 1
    trans = [[] for _ in range(m)]
    costs = [[] for _ in range(m)]
    for e in np.argsort(np.asarray(src, dtype=np.int64), kind="stable"):
        i, j = int(src[e]), int(dst[e])
        if i == goal:
            continue
        row = np.zeros(m)
        row[j] += float(p_success[e])
        row[F] += 1.0 - float(p_success[e])
        trans[i].append(tuple(row))
        costs[i].append(float(cost[e]))
    for i in range(n):
        if i != goal and not trans[i]:
            row = np.zeros(m)
            row[F] = 1.0
            trans[i].append(tuple(row))
            costs[i].append(0.0)
    return DiscreteBeliefMdp(tuple(tuple(r) for r in trans), tuple(tuple(c) for c in costs),
                             frozenset([goal]), frozenset([F]), name=name)


def random_graph(rng, n: int = 30, max_out: int = 3, max_policies: int = 8_000,
                 cost_range=(1.0, 10.0), p_range=(0.8, 1.0)):
    """Random goal-reaching graph whose policy count stays enumerable.

    Every node gets one edge toward a node closer to the goal (node 0), so
    every node can reach it; extra edges go anywhere while the product of
    out-degrees stays within ``max_policies``.  Returns ``(src, dst, cost, p)``.
    """
    order = rng.permutation(np.arange(1, n))
    rank = {0: 0}
    for r, v in enumerate(order, start=1):
        rank[int(v)] = r
    edges = []
    for v in order:
        closer = [u for u in range(n) if rank[u] < rank[int(v)]]
        edges.append((int(v), int(rng.choice(closer))))
    deg = {int(v): 1 for v in order}
    count = 1
    for v in rng.permutation(order):
        v = int(v)
        for _ in range(int(rng.integers(0, max_out))):
            if count // deg[v] * (deg[v] + 1) > max_policies:
                break
            taken = {d for s, d in edges if s == v}
            pool = [u for u in range(n) if u != v and u not in taken]
            edges.append((v, int(rng.choice(pool))))
            count = count // deg[v] * (deg[v] + 1)
            deg[v] += 1
    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    cost = rng.uniform(*cost_range, size=len(edges))
    p = rng.uniform(*p_range, size=len(edges))
    # a share of edges are certain, which makes improper cycles possible
    p[rng.random(len(edges)) < 0.3] = 1.0
    return src, dst, cost, p


# tree search on a discrete problem


class DiscreteSearchProblem:
    """Adapter exposing a DiscreteBeliefMdp through the tree-search problem interface.

    Beliefs and states are state indices.  Beyond the search horizon the
    rollout returns the exact cost-to-go of ``terminal_policy``, matching
    the leaves of :func:`expectimax_action`.
    """

    def __init__(self, mdp: DiscreteBeliefMdp, J_fail: float, terminal_policy=None):
        self.mdp = mdp
        self.J_fail = float(J_fail)
        if terminal_policy is None:
            terminal_policy = [0 if s not in mdp.terminals else -1 for s in range(mdp.n_states)]
        self.leaf = exact_policy_cost(mdp, terminal_policy, J_fail)
        cs = [c for s in mdp.nonterminal for c in mdp.costs[s]]
        self.typical_step_cost = float(np.mean(cs)) if cs else 1.0
        self._cdf = {}

    def is_goal(self, b) -> bool:
        return int(b) in self.mdp.goal

    def menu(self, b):
        s = int(b)
        if s in self.mdp.terminals:
            return []
        out = []
        for a in range(self.mdp.n_actions(s)):
            row = self.mdp.P(s, a)
            out.append((a, float(self.mdp.costs[s][a] + row @ self.leaf), False))
        return out

    def sample_state(self, b, rng):
        return int(b)

    def step(self, x, b, action, rng):
        s, a = int(x), int(action.target)
        key = (s, a)
        if key not in self._cdf:
            cdf = np.cumsum(self.mdp.P(s, a))
            cdf[-1] = 1.0
            self._cdf[key] = cdf
        s2 = int(np.searchsorted(self._cdf[key], rng.random(), side="right"))
        return s2, s2, float(self.mdp.costs[s][a]), s2 in self.mdp.fail

    def rollout(self, x, b, k, prev, rng) -> float:
        return float(self.leaf[int(x)])

    def distance(self, b1, b2) -> float:
        return 0.0 if int(b1) == int(b2) else math.inf
