"""scikit-learn style wrappers around the planners.

``fit(env)`` does the offline work (roadmap construction and valuation),
``predict(beliefs)`` returns the first control each planner would apply,
and ``execute(b0, seed)`` runs a closed-loop episode.  Hyperparameters are
constructor arguments so ``get_params`` / ``set_params`` / ``clone`` work.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import (FirmPolicyPlanner, HeuristicParams, OgrPlanner, build_uniform_roadmap, firm_execute,
                        ogr_plan_and_execute, urm_config, urm_pomcp_plan_and_execute, urm_problem)
from .beliefs import GaussianBelief
from .bvl import PlannerConfig, TreePlanner, bridged_problem, plan_and_execute
from .firm import FirmConfig, build_firm
from .simulation import Models, RoverSimulator, derive_rng
from .world import Environment


def check_environment(env) -> Environment:
    if not isinstance(env, Environment):
        raise TypeError(f"expected an Environment, got {type(env).__name__}")
    return env


def check_beliefs(X) -> list:
    """Accept one belief, a list of beliefs, or an (n, 3) array of means (covariance 0.01 I)."""
    if isinstance(X, GaussianBelief):
        return [X]
    if isinstance(X, (list, tuple)) and X and all(isinstance(b, GaussianBelief) for b in X):
        return list(X)
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.ndim != 2 or arr.shape[1] != 3 or not np.all(np.isfinite(arr)):
        raise ValueError("beliefs must be GaussianBelief objects or an (n, 3) array of finite means")
    return [GaussianBelief.create(row, np.eye(3) * 1e-2) for row in arr]


class _GraphEstimator(BaseEstimator):
    def _firm_config(self) -> FirmConfig:
        return FirmConfig(n_nodes=self.n_nodes, epsilon=self.epsilon, n_mc=self.n_mc,
                          connect_radius=self.connect_radius, J_fail=self.J_fail)

    def fit(self, env, y=None):
        env = check_environment(env)
        self.models_ = self.models if self.models is not None else Models()
        self.env_ = env
        self.graph_ = build_firm(env, self._firm_config(), self.models_, self.graph_seed)
        self.sim_ = RoverSimulator(env, self.graph_.models)
        return self

    def value(self, node: int) -> float:
        check_is_fitted(self, "graph_")
        return float(self.graph_.J[node])


class FIRMPlanner(_GraphEstimator):
    """Offline belief roadmap followed edge by edge along its policy."""

    def __init__(self, n_nodes=300, epsilon=0.05, n_mc=25, connect_radius=4.0, J_fail=1e6,
                 graph_seed=0, models=None, max_steps=1000):
        self.n_nodes = n_nodes
        self.epsilon = epsilon
        self.n_mc = n_mc
        self.connect_radius = connect_radius
        self.J_fail = J_fail
        self.graph_seed = graph_seed
        self.models = models
        self.max_steps = max_steps

    def predict(self, X):
        check_is_fitted(self, "graph_")
        out = []
        for b in check_beliefs(X):
            p = FirmPolicyPlanner(self.graph_, self.sim_)
            p.reset(b)
            out.append(p.act(b))
        return np.array(out)

    def execute(self, b0, seed=0):
        check_is_fitted(self, "graph_")
        return firm_execute(b0, self.graph_, self.env_, seed, self.sim_, self.max_steps)


class BVLPlanner(_GraphEstimator):
    """Roadmap valuation offline, bridged tree search online."""

    def __init__(self, n_nodes=300, epsilon=0.05, n_mc=25, connect_radius=4.0, J_fail=1e6, graph_seed=0,
                 models=None, N_p=100, K_sr=1, eta_q=None, eta_w=0.05, k_neighbors=5, delta_match=0.1,
                 rollout_cap=600, reuse_tree=True, max_steps=1000):
        self.n_nodes = n_nodes
        self.epsilon = epsilon
        self.n_mc = n_mc
        self.connect_radius = connect_radius
        self.J_fail = J_fail
        self.graph_seed = graph_seed
        self.models = models
        self.N_p = N_p
        self.K_sr = K_sr
        self.eta_q = eta_q
        self.eta_w = eta_w
        self.k_neighbors = k_neighbors
        self.delta_match = delta_match
        self.rollout_cap = rollout_cap
        self.reuse_tree = reuse_tree
        self.max_steps = max_steps

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(N_p=self.N_p, K_sr=self.K_sr, eta_q=self.eta_q, eta_w=self.eta_w,
                             k_neighbors=self.k_neighbors, delta_match=self.delta_match,
                             rollout_cap=self.rollout_cap, reuse_tree=self.reuse_tree)

    def predict(self, X, seed=0):
        check_is_fitted(self, "graph_")
        cfg = self.planner_config()
        problem = bridged_problem(self.graph_, self.sim_, cfg)
        out = []
        for i, b in enumerate(check_beliefs(X)):
            p = TreePlanner(problem, cfg, derive_rng(seed + i, "planner:BVL"))
            p.reset(b)
            out.append(p.act(b))
        return np.array(out)

    def execute(self, b0, seed=0):
        check_is_fitted(self, "graph_")
        return plan_and_execute(b0, self.graph_, self.env_, self.planner_config(), seed, self.max_steps, self.sim_)


class OGRPlanner(_GraphEstimator):
    """One-step Monte Carlo lookahead over roadmap controllers."""

    def __init__(self, n_nodes=300, epsilon=0.05, n_mc=25, connect_radius=4.0, J_fail=1e6, graph_seed=0,
                 models=None, n_og=20, k_neighbors=5, rollout_cap=600, max_steps=1000):
        self.n_nodes = n_nodes
        self.epsilon = epsilon
        self.n_mc = n_mc
        self.connect_radius = connect_radius
        self.J_fail = J_fail
        self.graph_seed = graph_seed
        self.models = models
        self.n_og = n_og
        self.k_neighbors = k_neighbors
        self.rollout_cap = rollout_cap
        self.max_steps = max_steps

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(k_neighbors=self.k_neighbors, rollout_cap=self.rollout_cap)

    def predict(self, X, seed=0):
        check_is_fitted(self, "graph_")
        out = []
        for i, b in enumerate(check_beliefs(X)):
            p = OgrPlanner(self.graph_, self.sim_, derive_rng(seed + i, "planner:OGR"), self.k_neighbors,
                           self.n_og, self.rollout_cap)
            out.append(p.act(b))
        return np.array(out)

    def execute(self, b0, seed=0):
        check_is_fitted(self, "graph_")
        return ogr_plan_and_execute(b0, self.graph_, self.env_, self.planner_config(), seed, self.sim_,
                                    self.n_og, self.max_steps)


class URMPOMCPPlanner(BaseEstimator):
    """Tree search over a uniform grid with a straight-line heuristic."""

    def __init__(self, spacing=0.5, epsilon=0.05, J_fail=1e6, models=None, N_p=100, K_sr=1, eta_q=None,
                 k_neighbors=5, delta_match=0.1, rollout_cap=600, stay_penalty=0.0, max_steps=1000):
        self.spacing = spacing
        self.epsilon = epsilon
        self.J_fail = J_fail
        self.models = models
        self.N_p = N_p
        self.K_sr = K_sr
        self.eta_q = eta_q
        self.k_neighbors = k_neighbors
        self.delta_match = delta_match
        self.rollout_cap = rollout_cap
        self.stay_penalty = stay_penalty
        self.max_steps = max_steps

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(N_p=self.N_p, K_sr=self.K_sr, eta_q=self.eta_q, k_neighbors=self.k_neighbors,
                             delta_match=self.delta_match, rollout_cap=self.rollout_cap,
                             stay_penalty=self.stay_penalty)

    def fit(self, env, y=None):
        env = check_environment(env)
        self.env_ = env
        self.sim_ = RoverSimulator(env, self.models if self.models is not None else Models())
        self.roadmap_ = build_uniform_roadmap(env, self.sim_, self.spacing, self.epsilon)
        return self

    def predict(self, X, seed=0):
        check_is_fitted(self, "roadmap_")
        params = HeuristicParams(self.sim_.step_length, self.sim_.models.weights, self.roadmap_.P_c_ref)
        cfg = urm_config(self.planner_config(), params.per_step_cost)
        problem = urm_problem(self.roadmap_, self.sim_, cfg, self.J_fail)
        out = []
        for i, b in enumerate(check_beliefs(X)):
            p = TreePlanner(problem, cfg, derive_rng(seed + i, "planner:URM-POMCP"))
            p.reset(b)
            out.append(p.act(b))
        return np.array(out)

    def execute(self, b0, seed=0):
        check_is_fitted(self, "roadmap_")
        return urm_pomcp_plan_and_execute(b0, self.roadmap_, self.env_, self.planner_config(), seed, self.sim_,
                                          J_fail=self.J_fail, max_steps=self.max_steps)
