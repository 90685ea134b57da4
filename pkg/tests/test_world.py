import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bvlnav.models import LandmarkSet, make_state
from bvlnav.world import (Environment, InfeasibleEnvironmentError, InfeasibleSpecError, Obstacle, RnpSpec,
                          collides, generate_rnp, sample_free_state)


@pytest.fixture(scope="module")
def obswall():
    return generate_rnp(RnpSpec("ObsWall", 20, 10))


class CountingRng:
    """Generator proxy counting position draws (two uniforms per attempt)."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.calls = 0

    def uniform(self, *a, **k):
        self.calls += 1
        return self.rng.uniform(*a, **k)


class TestGenerators:
    def test_forest_has_81_obstacles(self):
        env = generate_rnp(RnpSpec("Forest", 20, 81, seed=3))
        assert len(env.obstacles) == 81

    def test_obswall_layout(self, obswall):
        (wall,) = obswall.obstacles
        assert wall.ymax - wall.ymin == pytest.approx(10.0)
        cx = wall.center[0]
        assert obswall.start[0] < cx < obswall.goal[0]

    def test_infotrap_layout(self, infotrap_env):
        env = infotrap_env
        assert len(env.obstacles) == 2
        xs = {(o.xmin, o.xmax) for o in env.obstacles}
        assert len(xs) == 1
        x0, x1 = xs.pop()
        assert x1 - x0 == pytest.approx(3.0)
        assert env.start[0] < x0 and env.goal[0] > x1
        # landmarks along the top edge
        assert np.all(env.landmarks.positions[:, 1] > 9.0)

    def test_same_spec_same_environment(self):
        a = generate_rnp(RnpSpec("Forest", 20, 81, seed=7))
        b = generate_rnp(RnpSpec("Forest", 20, 81, seed=7))
        assert a.to_json() == b.to_json()
        c = generate_rnp(RnpSpec("Forest", 20, 81, seed=8))
        assert a.digest != c.digest

    def test_infeasible_specs(self):
        with pytest.raises(InfeasibleSpecError):
            generate_rnp(RnpSpec("ObsWall", 20, 19.5))
        with pytest.raises(InfeasibleSpecError):
            generate_rnp(RnpSpec("Forest", 10, 400))
        with pytest.raises(InfeasibleSpecError):
            RnpSpec("Maze", 10, 1)
        with pytest.raises(InfeasibleSpecError):
            RnpSpec("InfoTrap", -1, 1)

    def test_label(self):
        assert RnpSpec("InfoTrap", 10, 3).label == "RNP_InfoTrap(10,3)"


class TestCollision:
    def test_obstacle_center(self, obswall):
        assert collides(np.array(obswall.obstacles[0].center), None, obswall)

    def test_free_segment(self, obswall):
        assert not collides(make_state(2, 2), make_state(5, 3), obswall)

    def test_crossing_the_wall(self, obswall):
        a, b = make_state(8, 10), make_state(12, 10)
        assert not obswall.collides(a) and not obswall.collides(b)
        assert obswall.collides(a, b)

    def test_out_of_bounds(self, obswall):
        assert obswall.collides(make_state(-1, 5))
        assert obswall.collides(make_state(0.1, 5))

    def test_endpoint_symmetry(self, obswall, rng):
        for _ in range(2000):
            a, b = rng.uniform(-1, 21, size=(2, 2))
            assert obswall.collides(a, b) == obswall.collides(b, a)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 20), st.floats(0, 20), st.floats(0.0, 0.5))
    def test_inflation_monotone(self, ax, ay, bx, by, extra):
        kw = dict(bounds=(0, 0, 20, 20), obstacles=(Obstacle(9.75, 5, 10.25, 15),),
                  landmarks=LandmarkSet.from_points([]), start=make_state(2, 10), goal=make_state(18, 10))
        small = Environment(robot_radius=0.2, **kw)
        big = Environment(robot_radius=0.2 + extra, **kw)
        if small.collides((ax, ay), (bx, by)):
            assert big.collides((ax, ay), (bx, by))

    def test_invalid_environment(self):
        with pytest.raises(InfeasibleSpecError):
            Environment((0, 0, 10, 10), (Obstacle(4, 4, 6, 6),), LandmarkSet.from_points([]), make_state(5, 5),
                        make_state(9, 9))
        with pytest.raises(InfeasibleSpecError):
            Environment((0, 0, 10, 10), (), LandmarkSet.from_points([(11, 5)]), make_state(1, 1), make_state(9, 9))
        with pytest.raises(ValueError):
            Obstacle(1, 1, 1, 2)


class TestSampling:
    def test_samples_never_collide(self, obswall, rng):
        for _ in range(10_000):
            x = sample_free_state(obswall, rng)
            assert not obswall.collides(x)
            assert -np.pi < x[2] <= np.pi

    def test_empty_environment_acceptance(self):
        # points within one robot radius of the boundary are in collision, so the
        # acceptance rate of an empty square is the shrunk-square area ratio
        env = Environment((0, 0, 10, 10), (), LandmarkSet.from_points([]), make_state(1, 1), make_state(9, 9))
        rng = CountingRng(0)
        n = 20_000
        for _ in range(n):
            sample_free_state(env, rng)
        attempts = (rng.calls - n) / 2
        assert n / attempts == pytest.approx((9.6 / 10) ** 2, abs=0.01)

    def test_obswall_acceptance_matches_area(self, obswall):
        rng = CountingRng(1)
        n = 100_000
        for _ in range(n):
            sample_free_state(obswall, rng)
        attempts = (rng.calls - n) / 2
        wall = obswall.obstacles[0].inflated(obswall.robot_radius)
        free = 19.6**2 - (wall[2] - wall[0]) * (wall[3] - wall[1])
        assert n / attempts == pytest.approx(free / 400.0, abs=0.02)

    def test_infeasible_environment(self):
        env = Environment((0, 0, 10, 10), (Obstacle(0.001, 0.001, 9.999, 9.999),), LandmarkSet.from_points([]),
                          make_state(0.0005, 0.0005), make_state(9.9995, 9.9995), robot_radius=0.0)
        with pytest.raises(InfeasibleEnvironmentError):
            sample_free_state(env, np.random.default_rng(0), max_rejections=5)


def test_json_roundtrip(infotrap_env):
    env2 = Environment.from_json(infotrap_env.to_json())
    assert env2.to_json() == infotrap_env.to_json()
    assert env2.digest == infotrap_env.digest
    with pytest.raises(ValueError):
        Environment.from_dict({**infotrap_env.to_dict(), "schema_version": 99})
