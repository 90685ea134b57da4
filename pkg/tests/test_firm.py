import copy
import itertools
import json

import numpy as np
import pytest

from bvlnav.beliefs import GaussianBelief, belief_distance, ekf_predict, ekf_update, step_cost
from bvlnav.controllers import apply_controller
from bvlnav.firm import (FAIL, FirmConfig, FirmGraph, FirmNode, GraphFormatError, bellman_residual, build_graph,
                         deserialize_graph, evaluate_edge, evaluate_graph_policy, load_graph, neighbors_of_belief,
                         save_graph, serialize_graph, solve_graph, value_iteration, value_iteration_arrays)
from bvlnav.models import make_state, observe, propagate
from bvlnav.simulation import Models, RoverSimulator
from bvlnav.world import RnpSpec, generate_rnp


class TestValueIteration:
    def test_two_node_chain(self):
        J, pol = value_iteration_arrays(2, 0, [1], [0], [5.0], [0.9], 1000.0)
        assert J[1] == pytest.approx(105.0)
        assert J[0] == 0.0 and pol[1] == 0 and pol[0] == -1

    def test_costlier_parallel_edge_is_ignored(self):
        J, _ = value_iteration_arrays(2, 0, [1, 1], [0, 0], [5.0, 6.0], [0.9, 0.9], 1000.0)
        assert J[1] == pytest.approx(105.0)

    def test_ties_go_to_lowest_edge(self):
        _, pol = value_iteration_arrays(3, 0, [1, 1, 2], [0, 0, 1], [5.0, 5.0, 1.0], [1.0, 1.0, 1.0], 100.0)
        assert pol[1] == 0

    def test_unreachable_node_gets_j_fail(self):
        J, pol = value_iteration_arrays(3, 0, [1], [0], [2.0], [1.0], 50.0)
        assert J[2] == 50.0 and pol[2] == -1

    def test_matches_enumeration_on_small_graphs(self, rng):
        for _ in range(20):
            n = 7
            src, dst = [], []
            for s in range(1, n):
                targets = rng.choice([t for t in range(n) if t != s], size=rng.integers(1, 4), replace=False)
                for t in targets:
                    src.append(s)
                    dst.append(int(t))
            m = len(src)
            cost = rng.uniform(0.5, 10, m)
            p = np.where(rng.random(m) < 0.3, 1.0, rng.uniform(0.5, 1.0, m))
            J, _ = value_iteration_arrays(n, 0, src, dst, cost, p, 500.0)
            out = [[e for e in range(m) if src[e] == s] for s in range(n)]
            best = np.full(n, np.inf)
            for choice in itertools.product(*[o + [-1] for o in out[1:]]):
                pol = np.array([-1, *choice])
                best = np.minimum(best, evaluate_graph_policy(pol, 0, np.array(src), np.array(dst), cost, p, 500.0))
            np.testing.assert_allclose(J, best, atol=1e-9)


class TestGraph:
    def test_bellman_residual(self, small_graph):
        assert bellman_residual(small_graph) < 1e-8
        assert small_graph.J[small_graph.goal] == 0.0
        assert np.all(small_graph.J <= small_graph.J_fail)

    def test_policy_edges_exist(self, small_graph):
        for i, e in enumerate(small_graph.policy):
            if e >= 0:
                assert small_graph.edges[e].source == i

    def test_edge_probabilities(self, small_graph):
        for e in small_graph.edges:
            assert 0.0 <= e.p_success <= 1.0
            assert sum(e.outcome_probs.values()) == pytest.approx(1.0, abs=1e-9)
            assert np.isfinite(e.cost) and e.cost >= 0

    def test_nodes_free_and_distinct(self, small_graph, infotrap_env):
        means = small_graph.node_means
        for m in means:
            assert not infotrap_env.collides(m)
        d = np.hypot(*(means[:, None, :2] - means[None, :, :2]).transpose(2, 0, 1))
        assert np.min(d + np.eye(len(means)) * 1e9) > 0
        for c in small_graph.node_covs:
            assert np.linalg.eigvalsh(c).min() > 0

    def test_cheaper_edge_never_raises_values(self, small_graph):
        J0 = small_graph.J.copy()
        g = copy.copy(small_graph)
        g.edges = [copy.copy(e) for e in small_graph.edges]
        for e in g.edges[::7]:
            e.cost *= 0.5
        J1, _ = value_iteration(g)
        assert np.all(J1 <= J0 + 1e-9)

    def test_single_node_graph(self, infotrap_env):
        g = build_graph(infotrap_env, 1, 4.0, np.random.default_rng(0))
        assert g.n_nodes == 1 and g.edges == []
        solve_graph(g)
        assert g.J.tolist() == [0.0]

    def test_build_is_deterministic(self, infotrap_env):
        a = build_graph(infotrap_env, 15, 4.0, np.random.default_rng(4))
        b = build_graph(infotrap_env, 15, 4.0, np.random.default_rng(4))
        np.testing.assert_array_equal(a.node_means, b.node_means)
        assert [(e.source, e.target) for e in a.edges] == [(e.source, e.target) for e in b.edges]

    def test_edges_are_collision_free(self, small_graph, infotrap_env):
        for e in small_graph.edges:
            a, b = small_graph.node_means[e.source], small_graph.node_means[e.target]
            assert not infotrap_env.blocked(a, b)


class TestEvaluateEdge:
    def test_noiseless_matches_hand_loop(self, small_graph, infotrap_env):
        g = small_graph
        models = g.models
        sim = RoverSimulator(infotrap_env, models)
        edge = min(g.edges, key=lambda e: e.controller.n_nominal if e.controller.n_nominal > 3 else 1e9)
        cost, probs = evaluate_edge(g, edge, 3, np.random.default_rng(0), sim, noise_scale=0.0)
        assert probs[edge.target] == 1.0 and probs[FAIL] == 0.0
        # independent loop through the Python filter and controller
        src, dst = g.nodes[edge.source], g.nodes[edge.target]
        x, b, total = src.center.mean.copy(), src.center, 0.0
        for k in range(1000):
            if belief_distance(b, dst.center, models.metric) <= dst.epsilon:
                break
            u = apply_controller(edge.controller, b, k, models.motion.v_max)
            total += step_cost(b, models.weights)
            x = propagate(x, u, np.zeros(3), models.motion)
            b = ekf_update(ekf_predict(b, u, models.motion), observe(x, infotrap_env.landmarks, models.observation),
                           models.observation, infotrap_env.landmarks)
        assert cost == pytest.approx(total, rel=1e-9)

    def test_binomial_consistency(self, small_graph, infotrap_env):
        sim = RoverSimulator(infotrap_env, small_graph.models)
        edge = min(small_graph.edges, key=lambda e: e.p_success)
        _, small = evaluate_edge(small_graph, edge, 40, np.random.default_rng(1), sim)
        _, big = evaluate_edge(small_graph, edge, 400, np.random.default_rng(2), sim)
        p = big[edge.target]
        assert 0.0 < p < 1.0
        assert abs(small[edge.target] - p) <= 3 * np.sqrt(p * (1 - p) / 40)

    def test_rejects_zero_samples(self, small_graph, infotrap_env):
        with pytest.raises(ValueError):
            evaluate_edge(small_graph, small_graph.edges[0], 0, np.random.default_rng(0),
                          RoverSimulator(infotrap_env, small_graph.models))


class TestNeighbors:
    def test_node_center_ranks_first(self, small_graph, infotrap_env):
        for i in (3, 17, 40):
            nb = neighbors_of_belief(small_graph, small_graph.nodes[i].center, 5, infotrap_env)
            assert nb[0] == i

    def test_saturation(self, small_graph, infotrap_env):
        b = small_graph.nodes[5].center
        nb = neighbors_of_belief(small_graph, b, 10_000, infotrap_env)
        assert len(nb) == len(set(nb)) <= small_graph.n_nodes
        visible = [i for i, m in enumerate(small_graph.node_means) if not infotrap_env.blocked(b.mean, m)]
        assert sorted(nb) == visible

    def test_wall_occludes_nearest_node(self):
        env = generate_rnp(RnpSpec("ObsWall", 20, 10))
        cov = np.eye(3) * 1e-3
        near_behind = make_state(11.0, 10.0)
        far_same_side = make_state(6.0, 10.0)
        nodes = [FirmNode(0, GaussianBelief(make_state(*env.goal[:2]), cov), 0.05),
                 FirmNode(1, GaussianBelief(near_behind, cov), 0.05),
                 FirmNode(2, GaussianBelief(far_same_side, cov), 0.05)]
        g = FirmGraph(nodes, [])
        b = GaussianBelief(make_state(9.0, 10.0), cov)
        assert belief_distance(b, nodes[1].center) < belief_distance(b, nodes[2].center)
        assert neighbors_of_belief(g, b, 3, env) == [2]


class TestSerialization:
    def test_roundtrip_is_lossless(self, small_graph, tmp_path):
        path = tmp_path / "g.json"
        save_graph(small_graph, path)
        g = load_graph(path)
        np.testing.assert_array_equal(g.J, small_graph.J)
        np.testing.assert_array_equal(g.policy, small_graph.policy)
        assert [e.p_success for e in g.edges] == [e.p_success for e in small_graph.edges]
        assert [e.cost for e in g.edges] == [e.cost for e in small_graph.edges]
        np.testing.assert_array_equal(g.node_covs, small_graph.node_covs)
        np.testing.assert_array_equal(g.stab_gains, small_graph.stab_gains)

    def test_value_iteration_is_idempotent_after_load(self, small_graph, tmp_path):
        g = deserialize_graph(json.loads(json.dumps(serialize_graph(small_graph))))
        J, pol = value_iteration(g)
        np.testing.assert_array_equal(J, small_graph.J)
        np.testing.assert_array_equal(pol, small_graph.policy)

    def test_controllers_survive_roundtrip(self, small_graph):
        g = deserialize_graph(json.loads(json.dumps(serialize_graph(small_graph))))
        e0, e1 = small_graph.edges[10].controller, g.edges[10].controller
        b = small_graph.nodes[small_graph.edges[10].source].center
        for k in (0, 1, 5):
            np.testing.assert_array_equal(apply_controller(e0, b, k, 2.0), apply_controller(e1, b, k, 2.0))

    def test_truncated_file(self, small_graph, tmp_path):
        path = tmp_path / "g.json"
        save_graph(small_graph, path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(GraphFormatError):
            load_graph(path)

    def test_schema_mismatch(self, small_graph):
        doc = serialize_graph(small_graph)
        doc["schema_version"] = 99
        with pytest.raises(GraphFormatError):
            deserialize_graph(doc)
        doc = serialize_graph(small_graph)
        del doc["edges"]
        with pytest.raises(GraphFormatError):
            deserialize_graph(doc)

    def test_environment_mismatch(self, small_graph, tmp_path):
        path = tmp_path / "g.json"
        save_graph(small_graph, path)
        with pytest.raises(GraphFormatError):
            load_graph(path, generate_rnp(RnpSpec("ObsWall", 20, 10)))


def test_config_validation():
    with pytest.raises(ValueError):
        FirmConfig(n_nodes=0)
    with pytest.raises(ValueError):
        FirmConfig(epsilon=-1.0)
    assert Models().weights.xi_p == 10.0
