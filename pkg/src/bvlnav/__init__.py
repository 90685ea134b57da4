"""Risk-averse rover navigation in belief space.

An offline belief roadmap (sampled nodes with stabilizing LQG controllers,
Monte Carlo edge costs, value iteration) supplies cost-to-go values that an
online belief-tree search bootstraps from.  Baseline planners, benchmark
environments, brute-force oracles and an experiment CLI are included.
"""
from .beliefs import CostWeights, GaussianBelief, belief_distance, ekf_predict, ekf_update, is_in_node, step_cost
from .bvl import PlannerConfig, plan_and_execute
from .baselines import (build_uniform_roadmap, firm_execute, ogr_plan_and_execute, ogr_step, urm_heuristic,
                        urm_pomcp_plan_and_execute)
from .episode import EpisodeLog, run_episode
from .estimators import BVLPlanner, FIRMPlanner, OGRPlanner, URMPOMCPPlanner
from .experiment import ExperimentConfig, compute_scores, load_config, run_experiment, run_sweep
from .firm import FirmConfig, FirmGraph, build_firm, load_graph, save_graph, value_iteration
from .simulation import Models, RoverSimulator
from .world import Environment, RnpSpec, generate_rnp

__version__ = "0.1.0"

__all__ = [
    "BVLPlanner", "CostWeights", "EpisodeLog", "Environment", "ExperimentConfig", "FIRMPlanner", "FirmConfig",
    "FirmGraph", "GaussianBelief", "Models", "OGRPlanner", "PlannerConfig", "RnpSpec", "RoverSimulator",
    "URMPOMCPPlanner", "belief_distance", "build_firm", "build_uniform_roadmap", "compute_scores", "ekf_predict",
    "ekf_update", "firm_execute", "generate_rnp", "is_in_node", "load_config", "load_graph", "ogr_plan_and_execute",
    "ogr_step", "plan_and_execute", "run_episode", "run_experiment", "run_sweep", "save_graph", "step_cost",
    "urm_heuristic", "urm_pomcp_plan_and_execute", "value_iteration",
]
