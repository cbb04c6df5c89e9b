import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sidewalk.world import (
    ROBOT_SPEED_CAP,
    NonFiniteStateError,
    PedestrianInput,
    PedestrianState,
    PointMassState,
    RobotAction,
    RobotState,
    SidewalkGeometry,
    check_bounds,
    check_collision,
    mirror,
    step_pedestrian,
    step_point_mass,
    step_robot,
    wrap_angle,
)

finite = st.floats(min_value=-10, max_value=10, allow_nan=False)
angle = st.floats(min_value=-50, max_value=50, allow_nan=False)


class TestGeometry:
    def test_defaults(self):
        g = SidewalkGeometry()
        assert (g.length, g.width, g.agent_radius) == (15.0, 2.5, 0.3)
        assert g.lateral_limit == pytest.approx(0.95)

    @pytest.mark.parametrize("kw", [{"length": 0}, {"width": -1}, {"agent_radius": 0}, {"agent_radius": 1.25}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SidewalkGeometry(**kw)


class TestWrapAngle:
    def test_examples(self):
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-3.5 * math.pi) == pytest.approx(0.5 * math.pi)

    def test_pi_maps_to_pi(self):
        assert wrap_angle(math.pi) == math.pi
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)

    @given(angle)
    def test_range_and_idempotent(self, theta):
        w = wrap_angle(theta)
        assert -math.pi < w <= math.pi
        assert wrap_angle(w) == w
        assert math.cos(w) == pytest.approx(math.cos(theta), abs=1e-9)
        assert math.sin(w) == pytest.approx(math.sin(theta), abs=1e-9)

    def test_non_finite(self):
        with pytest.raises(NonFiniteStateError):
            wrap_angle(math.nan)


class TestPedestrianStep:
    def test_straight_walk(self):
        s = step_pedestrian(PedestrianState(0.0, 0.0, 0.0), PedestrianInput(), 0.05)
        assert s.x == pytest.approx(0.067)
        assert (s.y, s.psi, s.v_f, s.v_l, s.omega) == (0.0, 0.0, 1.34, 0.0, 0.0)

    def test_stationary_fixed_point(self):
        s0 = PedestrianState(3.0, -0.2, 1.0, v_f=0.0)
        assert step_pedestrian(s0, PedestrianInput(), 0.05) == s0

    def test_damped_sidestep(self):
        s = step_pedestrian(PedestrianState(0.0, 0.0, 0.0, v_f=0.0, v_l=1.0), PedestrianInput(), 0.05, damping=2.0)
        assert s.y == pytest.approx(0.05)
        assert s.v_l == pytest.approx(0.9)

    @given(finite, st.floats(-0.9, 0.9), st.floats(-3.1, 3.1))
    def test_zero_input_straight_line(self, x, y, psi):
        s = PedestrianState(x, y, psi)
        for _ in range(20):
            s = step_pedestrian(s, PedestrianInput())
        assert s.psi == psi
        assert s.x == pytest.approx(x + 20 * 0.05 * 1.34 * math.cos(psi), abs=1e-9)
        assert s.y == pytest.approx(y + 20 * 0.05 * 1.34 * math.sin(psi), abs=1e-9)

    @given(finite, finite, st.floats(-3.14, 3.14), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
    def test_mirror_symmetry(self, x, y, psi, v_l, omega, u_st, u_ss):
        s = PedestrianState(x, y, psi, 1.34, v_l, omega)
        u = PedestrianInput(u_st, u_ss)
        assert step_pedestrian(mirror(s), mirror(u)) == mirror(step_pedestrian(s, u))

    def test_mirror_exact_at_half_turn(self):
        s = PedestrianState(15.0, 0.3, math.pi, 1.34, 0.1, 0.2)
        u = PedestrianInput(0.5, -0.4)
        assert step_pedestrian(mirror(s), mirror(u)) == mirror(step_pedestrian(s, u))

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteStateError):
            step_pedestrian(PedestrianState(0.0, math.inf, 0.0), PedestrianInput())


class TestRobotStep:
    def test_straight_drive(self):
        s = step_robot(RobotState(15.0, 0.0, math.pi, 1.34), RobotAction(), 0.05)
        assert s.x == pytest.approx(14.933)
        assert s.y == 0.0
        assert s.v == 1.34
        assert s.psi == math.pi

    def test_zero_speed_no_motion(self):
        s = step_robot(RobotState(5.0, 0.2, 1.0, 0.0), RobotAction(0.0, 0.8), 0.05)
        assert (s.x, s.y, s.psi, s.v) == (5.0, 0.2, 1.0, 0.0)

    def test_acceleration(self):
        s = step_robot(RobotState(0.0, 0.0, 0.0, 1.0), RobotAction(1.0, 0.0), 0.05)
        assert s.v == pytest.approx(1.075)

    def test_yaw_rate_field(self):
        s = step_robot(RobotState(0.0, 0.0, 0.0, 1.2), RobotAction(0.0, 0.5), 0.05)
        assert s.yaw_rate == pytest.approx(1.2 / 0.6 * math.tan(0.25))

    @given(st.floats(0, 2.5), st.floats(-1, 1), st.floats(-1, 1), st.floats(-3.14, 3.14))
    def test_speed_clamped(self, v, a_n, s_n, psi):
        s = RobotState(7.0, 0.0, psi, v)
        for _ in range(10):
            s = step_robot(s, RobotAction(a_n, s_n))
            assert 0.0 <= s.v <= ROBOT_SPEED_CAP
            assert -math.pi < s.psi <= math.pi

    @given(finite, finite, st.floats(-3.14, 3.14), st.floats(0, 2.5), st.floats(-1, 1), st.floats(-1, 1))
    def test_mirror_symmetry(self, x, y, psi, v, a_n, s_n):
        s = RobotState(x, y, psi, v)
        a = RobotAction(a_n, s_n)
        assert step_robot(mirror(s), mirror(a)) == mirror(step_robot(s, a))

    def test_action_clipping(self):
        assert RobotAction(1.4, -3.0).clipped() == RobotAction(1.0, -1.0)

    def test_deterministic(self):
        s = RobotState(14.0, 0.1, 3.0, 1.1)
        a = RobotAction(0.3, -0.2)
        assert step_robot(s, a) == step_robot(s, a)


class TestPointMass:
    def test_free_motion(self):
        s = step_point_mass(PointMassState(10.0, 0.0, -1.34, 0.0), (0.0, 0.0), 0.05)
        assert s.x == pytest.approx(10.0 - 0.067)

    def test_at_rest(self):
        s0 = PointMassState(1.0, 2.0)
        assert step_point_mass(s0, (0.0, 0.0)) == s0

    def test_speed_cap(self):
        s = step_point_mass(PointMassState(0.0, 0.0, -2.0, 0.0), (0.0, 0.0), 0.05, speed_cap=1.742)
        assert math.hypot(s.vx, s.vy) == pytest.approx(1.742)
        assert s.vy == 0.0 and s.vx < 0

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_cap_invariant(self, fx, fy):
        s = PointMassState(0.0, 0.0, -1.0, 0.3)
        for _ in range(5):
            s = step_point_mass(s, (fx, fy))
            assert math.hypot(s.vx, s.vy) <= 1.3 * 1.34 + 1e-12


class TestCollisionAndBounds:
    def test_collision_threshold(self):
        assert check_collision((0.0, 0.0), (0.59, 0.0), 0.3)
        assert not check_collision((0.0, 0.0), (0.60, 0.0), 0.3)
        assert check_collision((1.0, 1.0), (1.0, 1.0), 0.3)

    def test_bounds(self):
        g = SidewalkGeometry()
        assert not check_bounds(0.0, g)
        assert check_bounds(0.96, g)
        assert not check_bounds(-0.95, g)
