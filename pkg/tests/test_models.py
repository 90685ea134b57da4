import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bvlnav import _kernels as K
from bvlnav.models import (InvalidModelError, LandmarkSet, MotionModel, ObservationModel, clamp_control,
                           generative_step, linearize, make_state, observation_function, observe, propagate,
                           wrap_angle)
from bvlnav.world import Environment


def bare_env(landmarks):
    return Environment((-20, -20, 20, 20), (), LandmarkSet.from_points(landmarks), make_state(0, 0), make_state(1, 1))


class TestPropagate:
    def test_fixed_point(self):
        x = make_state(1.0, 2.0, 0.5)
        np.testing.assert_array_equal(propagate(x, np.zeros(3), np.zeros(3), MotionModel()), x)

    def test_paper_step(self):
        out = propagate(np.zeros(3), np.array([1.0, 0, 0]), np.zeros(3), MotionModel(dt=0.005))
        np.testing.assert_allclose(out, [0.005, 0.0, 0.0])

    def test_two_steps_add(self):
        m = MotionModel()
        u1, u2 = np.array([0.5, -1.0, 0.2]), np.array([1.5, 0.3, -0.4])
        x = propagate(propagate(np.zeros(3), u1, np.zeros(3), m), u2, np.zeros(3), m)
        np.testing.assert_allclose(x, (u1 + u2) * m.dt, atol=1e-15)

    def test_clamps_and_flags(self):
        diag = {}
        out = propagate(np.zeros(3), np.array([5.0, 0, 0]), np.zeros(3), MotionModel(), diag)
        assert out[0] == pytest.approx(0.2)
        assert diag["control_clamped"]

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-50, 50), st.floats(-2, 2))
    def test_heading_stays_wrapped(self, th, w):
        out = propagate(make_state(0, 0, 0) + np.array([0, 0, th]), np.array([0, 0, 2.0]), np.array([0, 0, w]),
                        MotionModel())
        assert -np.pi < out[2] <= np.pi


def test_wrap_angle_range():
    a = np.linspace(-20, 20, 1001)
    w = wrap_angle(a)
    assert np.all((w > -np.pi) & (w <= np.pi))
    np.testing.assert_allclose(np.cos(w), np.cos(a), atol=1e-12)
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)


def test_model_validation():
    with pytest.raises(InvalidModelError):
        MotionModel(dt=0.0)
    with pytest.raises(InvalidModelError):
        ObservationModel(xi_r=-1.0)
    with pytest.raises(InvalidModelError):
        LandmarkSet((1, 1), np.zeros((2, 2)))


class TestObserve:
    def test_east_landmark(self):
        z = observe(np.zeros(3), LandmarkSet.from_points([(1.0, 0.0)]), ObservationModel())
        assert z.readings() == [(0, 1.0, 0.0)]

    def test_heading_relative_bearing(self):
        z = observe(make_state(0, 0, np.pi / 2), LandmarkSet.from_points([(0.0, 1.0)]), ObservationModel())
        assert z.readings()[0][2] == pytest.approx(0.0)

    def test_noise_std_formula(self):
        sr, _ = ObservationModel(xi_r=0.1, sigma_rb=0.01).noise_std(5.0)
        assert sr == pytest.approx(0.51)

    def test_out_of_range_and_coincident_are_skipped(self):
        lms = LandmarkSet.from_points([(0.0, 0.0), (10.0, 0.0), (3.0, 0.0)])
        z = observe(np.zeros(3), lms, ObservationModel(sensing_range=6))
        assert [r[0] for r in z.readings()] == [2]

    def test_readings_use_landmark_ids(self):
        lms = LandmarkSet((7, 9), np.array([[1.0, 0.0], [0.0, 2.0]]))
        z = observe(np.zeros(3), lms, ObservationModel())
        assert [r[0] for r in z.readings(lms)] == [7, 9]

    def test_noise_slopes_by_regression(self):
        rng = np.random.default_rng(0)
        om = ObservationModel(xi_r=0.1, xi_theta=0.05, sigma_rb=0.01, sigma_tb=0.01)
        d = np.linspace(0.5, 5.5, 1000)
        lms = LandmarkSet.from_points(np.c_[d, np.zeros_like(d)])
        errs = []
        for _ in range(100):
            z = observe(np.zeros(3), lms, om, rng)
            errs.append(z.values - np.c_[d, np.zeros_like(d)])
        errs = np.array(errs)
        # bin by distance and regress the empirical std on distance
        bins = np.array_split(np.arange(1000), 20)
        centers = np.array([d[b].mean() for b in bins])
        for col, slope in ((0, 0.1), (1, 0.05)):
            std = np.array([errs[:, b, col].std() for b in bins])
            fit = np.polyfit(centers, std, 1)
            assert abs(fit[0] - slope) / slope < 0.05


class TestLinearize:
    def test_identity_dynamics(self):
        lms = LandmarkSet.from_points([(2.0, 1.0)])
        A, Qw, H, R = linearize(np.zeros(3), np.array([1.0, 0, 0]), lms, MotionModel(), ObservationModel())
        np.testing.assert_array_equal(A, np.eye(3))
        np.testing.assert_allclose(Qw, MotionModel().noise_cov([1.0, 0, 0]))
        assert H.shape == (2, 3) and R.shape == (2, 2)

    def test_east_gradient(self):
        H, _, _ = K.observation_jacobian(np.zeros(3), 4.0, 0.0)
        assert H[0, 0] == pytest.approx(-1.0)
        assert H[0, 1] == pytest.approx(0.0)

    def test_finite_differences(self, rng):
        lms = LandmarkSet.from_points(rng.uniform(-5, 5, size=(3, 2)))
        mm, om = MotionModel(), ObservationModel(sensing_range=100)
        h = 1e-6
        for _ in range(100):
            x = np.r_[rng.uniform(-5, 5, 2), rng.uniform(-3, 3)]
            u = rng.uniform(-2, 2, 3)
            A, _, H, _ = linearize(x, u, lms, mm, om, index=[0, 1, 2])
            numA = np.zeros((3, 3))
            numH = np.zeros((6, 3))
            for c in range(3):
                dx = np.zeros(3)
                dx[c] = h
                fp = propagate(x + dx, u, np.zeros(3), mm)
                fm = propagate(x - dx, u, np.zeros(3), mm)
                df = fp - fm
                df[2] = wrap_angle(df[2])
                numA[:, c] = df / (2 * h)
                dh = observation_function(x + dx, lms, [0, 1, 2]) - observation_function(x - dx, lms, [0, 1, 2])
                dh[1::2] = wrap_angle(dh[1::2])
                numH[:, c] = dh / (2 * h)
            assert np.max(np.abs(numA - A)) < 1e-5
            assert np.max(np.abs(numH - H)) < 1e-5


class TestGenerative:
    def test_zero_noise_reproduces_pipeline(self):
        env = bare_env([(3.0, 0.0), (0.0, 3.0)])
        mm = MotionModel(sigma_w=0.0, sigma_w_bias=0.0)
        om = ObservationModel(xi_r=0, xi_theta=0, sigma_rb=0, sigma_tb=0)
        x = make_state(0.5, 0.5, 0.1)
        u = np.array([1.0, -0.5, 0.3])
        x2, z = generative_step(x, u, env, mm, om, np.random.default_rng(0))
        np.testing.assert_array_equal(x2, propagate(x, u, np.zeros(3), mm))
        ref = observe(x2, env.landmarks, om)
        np.testing.assert_array_equal(z.values, ref.values)

    def test_seeded_determinism(self):
        env = bare_env([(3.0, 0.0)])
        a = generative_step(np.zeros(3), np.ones(3), env, MotionModel(), ObservationModel(), np.random.default_rng(5))
        b = generative_step(np.zeros(3), np.ones(3), env, MotionModel(), ObservationModel(), np.random.default_rng(5))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1].values, b[1].values)

    def test_mean_of_samples(self):
        env = bare_env([])
        mm = MotionModel()
        u = np.array([1.0, -2.0, 0.5])
        rng = np.random.default_rng(1)
        n = 100_000
        xs = np.array([generative_step(np.zeros(3), u, env, mm, ObservationModel(), rng)[0] for _ in range(n)])
        sigma = np.sqrt(np.diag(mm.noise_cov(u)))
        err = np.abs(xs.mean(axis=0) - u * mm.dt)
        assert np.all(err < 3 * sigma / np.sqrt(n))


def test_clamp_control():
    np.testing.assert_array_equal(clamp_control([3.0, -3.0, 0.5], 2.0), [2.0, -2.0, 0.5])
