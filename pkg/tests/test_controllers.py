import math

import numpy as np
import pytest

from bvlnav.beliefs import GaussianBelief, ekf_predict, ekf_update
from bvlnav.controllers import (EdgeRejectedError, StationaryLqg, SynthesisError, apply_controller,
                                filter_riccati_step, is_detectable, make_edge_controller, make_node_controller,
                                nominal_steps, solve_dare, stationary_filter_covariance)
from bvlnav.models import LandmarkSet, MotionModel, ObservationModel, linearize, make_state, observe
from bvlnav.world import Environment, Obstacle


@pytest.fixture(scope="module")
def env():
    lms = LandmarkSet.from_points([(2.0, 8.0), (8.0, 8.0), (5.0, 1.0)])
    return Environment((0, 0, 10, 10), (Obstacle(4.5, 3.0, 5.5, 7.0),), lms, make_state(1, 5), make_state(9, 5))


class TestDare:
    def test_golden_ratio(self):
        sol = solve_dare(np.eye(3), np.eye(3), np.eye(3), np.eye(3))
        phi = (1 + math.sqrt(5)) / 2
        np.testing.assert_allclose(sol.cost_matrix, phi * np.eye(3), atol=1e-10)
        # the feedback gain is (sqrt5 - 1)/2, which leaves the pole at (3 - sqrt5)/2
        np.testing.assert_allclose(sol.gain, (math.sqrt(5) - 1) / 2 * np.eye(3), atol=1e-10)
        assert sol.spectral_radius == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-10)

    def test_uncontrolled_stable_system(self):
        Wx = np.diag([1.0, 2.0, 3.0])
        sol = solve_dare(0.5 * np.eye(3), np.zeros((3, 3)), Wx, np.eye(3))
        np.testing.assert_allclose(sol.cost_matrix, Wx / 0.75, atol=1e-9)
        assert sol.spectral_radius == pytest.approx(0.5)

    def test_residual_and_stability(self, rng):
        for _ in range(20):
            A = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
            B = rng.standard_normal((3, 3))
            sol = solve_dare(A, B, np.eye(3), 0.1 * np.eye(3))
            S = sol.cost_matrix
            L = np.linalg.solve(0.1 * np.eye(3) + B.T @ S @ B, B.T @ S @ A)
            ric = np.eye(3) + A.T @ S @ A - A.T @ S @ B @ L
            assert np.linalg.norm(ric - S) < 1e-8
            assert sol.residual < 1e-8 and sol.spectral_radius < 1

    def test_unstabilizable_raises(self):
        with pytest.raises(SynthesisError):
            solve_dare(2 * np.eye(3), np.zeros((3, 3)), np.eye(3), np.eye(3))

    def test_indefinite_control_weight_raises(self):
        with pytest.raises(SynthesisError):
            solve_dare(np.eye(3), np.eye(3), np.eye(3), -np.eye(3))


class TestFilterCovariance:
    def test_noise_free_is_zero(self):
        P = stationary_filter_covariance(np.eye(3), np.eye(3), np.zeros((3, 3)), 0.1 * np.eye(3))
        np.testing.assert_allclose(P, 0.0, atol=1e-12)

    @pytest.mark.parametrize("q,r", [(0.01, 0.1), (1.0, 1.0), (0.3, 2.0)])
    def test_scalar_fixed_point(self, q, r):
        p = stationary_filter_covariance([[1.0]], [[1.0]], [[q]], [[r]])[0, 0]
        assert p == pytest.approx(r * (p + q) / (p + q + r), abs=1e-12)
        # closed-form positive root of p^2 + q p - q r = 0
        assert p == pytest.approx((-q + math.sqrt(q * q + 4 * q * r)) / 2, abs=1e-10)

    def test_invariant_under_one_step(self, env):
        A, Qw, H, R = linearize(make_state(3, 6), np.zeros(3), env.landmarks, MotionModel(), ObservationModel())
        P = stationary_filter_covariance(A, H, Qw, R)
        assert np.linalg.norm(filter_riccati_step(P, A, H, Qw, R) - P) < 1e-8
        assert np.linalg.eigvalsh(P).min() > 0

    def test_undetectable_raises(self):
        with pytest.raises(SynthesisError):
            stationary_filter_covariance(np.eye(3), np.zeros((0, 3)), 0.01 * np.eye(3), np.zeros((0, 0)))
        assert not is_detectable(np.eye(3), np.array([[1.0, 0, 0]]))
        assert is_detectable(0.5 * np.eye(3), np.zeros((0, 3)))

    def test_filter_run_converges(self, env):
        mm, om = MotionModel(), ObservationModel()
        ctrl = make_node_controller(make_state(3, 6), env, mm, om)
        b = GaussianBelief(ctrl.target.copy(), 0.5 * np.eye(3))
        for _ in range(500):
            b = ekf_predict(b, np.zeros(3), mm)
            b = ekf_update(b, observe(ctrl.target, env.landmarks, om), om, env.landmarks)
        np.testing.assert_allclose(b.cov, ctrl.P_c, atol=1e-6)


class TestNodeController:
    def test_equilibrium(self, env):
        ctrl = make_node_controller(make_state(3, 6), env, MotionModel(), ObservationModel())
        u = apply_controller(ctrl, ctrl.center, 0, 2.0)
        np.testing.assert_allclose(u, 0.0, atol=1e-15)
        assert ctrl.spectral_radius < 1

    def test_contracts_from_offset(self, env):
        mm = MotionModel()
        ctrl = make_node_controller(make_state(3, 6), env, mm, ObservationModel())
        m = ctrl.target + np.array([0.5, 0.0, 0.0])
        prev = np.linalg.norm(m - ctrl.target)
        for k in range(200):
            u = apply_controller(ctrl, GaussianBelief(m, ctrl.P_c), k, np.inf)
            m = m + u * mm.dt
            err = np.linalg.norm(m - ctrl.target)
            assert err <= (ctrl.spectral_radius + 1e-6) * prev + 1e-15
            prev = err
        assert prev < 1e-3

    def test_rejects_colliding_center(self, env):
        with pytest.raises(SynthesisError):
            make_node_controller(make_state(5, 5), env, MotionModel(), ObservationModel())

    def test_no_landmarks_in_range(self):
        far = Environment((0, 0, 40, 40), (), LandmarkSet.from_points([(39, 39)]), make_state(1, 1), make_state(2, 2))
        with pytest.raises(SynthesisError):
            make_node_controller(make_state(1, 1), far, MotionModel(), ObservationModel())


class TestEdgeController:
    def stab(self, env, v):
        return make_node_controller(v, env, MotionModel(), ObservationModel())

    def test_degenerate_edge(self, env):
        v = make_state(2, 5)
        ctrl = make_edge_controller(v, v, env, MotionModel(), self.stab(env, v))
        assert ctrl.n_nominal == 0 and ctrl.nominal == []
        b = GaussianBelief(v + np.array([0.1, -0.1, 0.0]), np.eye(3) * 1e-3)
        np.testing.assert_allclose(apply_controller(ctrl, b, 0, 2.0), apply_controller(ctrl.stabilizer, b, 0, 2.0))

    def test_step_count(self, env):
        mm = MotionModel()
        vi, vj = make_state(1, 1), make_state(3.1, 2.0)
        n = nominal_steps(vi, vj, mm)
        assert n == math.ceil(math.hypot(2.1, 1.0) / (mm.v_max * mm.dt))
        assert nominal_steps(vi, vj, MotionModel(dt=0.005, v_max=1.0)) == math.ceil(math.hypot(2.1, 1.0) / 0.005)

    def test_noiseless_execution_follows_nominal(self, env):
        mm = MotionModel()
        vi, vj = make_state(1, 6.5, 0.3), make_state(3.5, 5.5, -0.4)
        ctrl = make_edge_controller(vi, vj, env, mm, self.stab(env, vj))
        m = vi.copy()
        dev = 0.0
        for k, (xn, un) in enumerate(ctrl.nominal):
            assert np.all(np.abs(un) <= mm.v_max + 1e-12)
            dev = max(dev, np.max(np.abs(m - xn)))
            u = apply_controller(ctrl, GaussianBelief(m, np.eye(3) * 1e-3), k, mm.v_max)
            np.testing.assert_allclose(u, un, atol=1e-9)
            m = m + u * mm.dt
        assert dev < 1e-6
        np.testing.assert_allclose(m, vj, atol=1e-6)

    def test_clamps_feedback(self, env):
        mm = MotionModel()
        vj = make_state(3, 6)
        ctrl = make_edge_controller(make_state(1, 6), vj, env, mm, self.stab(env, vj))
        b = GaussianBelief(make_state(1, 6) + np.array([0.0, 100.0, 0.0]), np.eye(3))
        u = apply_controller(ctrl, b, 0, mm.v_max)
        assert u[1] == -mm.v_max

    def test_one_step_deviation_shrinks(self, env):
        mm = MotionModel()
        vi, vj = make_state(1, 6.5), make_state(3.5, 5.5)
        ctrl = make_edge_controller(vi, vj, env, mm, self.stab(env, vj))
        m = vi + np.array([0.05, -0.05, 0.02])
        u = apply_controller(ctrl, GaussianBelief(m, np.eye(3)), 0, np.inf)
        e0 = np.linalg.norm(m - ctrl.nominal_state(0))
        e1 = np.linalg.norm(m + u * mm.dt - ctrl.nominal_state(1))
        assert e1 < e0

    def test_blocked_edge_rejected(self, env):
        vj = make_state(8, 6)
        with pytest.raises(EdgeRejectedError):
            make_edge_controller(make_state(2, 6), vj, env, MotionModel(), self.stab(env, vj))


def test_stationary_lqg_center(env):
    ctrl = make_node_controller(make_state(3, 6), env, MotionModel(), ObservationModel())
    assert isinstance(ctrl, StationaryLqg)
    assert ctrl.center.cov is ctrl.P_c
    assert ctrl.n_nominal == 0
