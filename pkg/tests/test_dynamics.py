import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bimodal_nav.core import Mode, VehicleParams, VehicleState
from bimodal_nav.dynamics import (Disturbances, FlightInput, GroundResistance, IntegrationError, LandInput,
                                  flight_accel, flight_angular_accel, input_power, land_accel, land_yaw_accel,
                                  motor_power, motor_rpms, resistive_moment, rpm_from_torque, step, thrust_axis)

angles = st.floats(-1.5, 1.5)


def rotation_zyx(phi, theta, psi):
    cx, sx = math.cos(phi), math.sin(phi)
    cy, sy = math.cos(theta), math.sin(theta)
    cz, sz = math.cos(psi), math.sin(psi)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def unit_params(**kw):
    base = dict(m=1.0, J=(0.05, 0.05, 0.05))
    base.update(kw)
    return VehicleParams(**base)


class TestThrustAxis:
    def test_level(self):
        np.testing.assert_allclose(thrust_axis((0, 0, 0)), (0, 0, 1), atol=1e-15)

    def test_pitch_forward(self):
        np.testing.assert_allclose(thrust_axis((0, math.pi / 2, 0)), (1, 0, 0), atol=1e-15)

    def test_random_against_rotation_matrix(self, rng):
        for att in rng.uniform(-math.pi, math.pi, (50, 3)):
            np.testing.assert_allclose(thrust_axis(att), rotation_zyx(*att)[:, 2], atol=1e-12)

    @given(angles, angles, st.floats(-math.pi, math.pi))
    def test_unit_norm(self, phi, theta, psi):
        assert np.linalg.norm(thrust_axis((phi, theta, psi))) == pytest.approx(1.0, abs=1e-12)


class TestFlight:
    def test_hover_equilibrium(self):
        a = flight_accel(VehicleState(mode=Mode.AIR), FlightInput(9.81), np.zeros(3), unit_params())
        np.testing.assert_allclose(a, 0.0, atol=1e-12)

    def test_free_fall(self):
        a = flight_accel(VehicleState(mode=Mode.AIR), FlightInput(0.0), np.zeros(3), unit_params())
        np.testing.assert_allclose(a, (0, 0, -9.81), atol=1e-12)

    def test_pitched_with_wind(self):
        st_ = VehicleState(attitude=(0, math.pi / 2, 0), mode=Mode.AIR)
        a = flight_accel(st_, FlightInput(9.81), (1.0, 0, 0), unit_params())
        np.testing.assert_allclose(a, (8.81, 0, -9.81), atol=1e-12)

    @given(st.tuples(angles, angles, angles), st.floats(0, 40), st.floats(0, 40), st.floats(-2, 2))
    def test_affine_in_thrust(self, att, f1, f2, lam):
        p = VehicleParams()
        s = VehicleState(attitude=att, mode=Mode.AIR)
        d = np.array([0.3, -0.2, 0.1])
        mix = lam * f1 + (1 - lam) * f2
        lhs = flight_accel(s, FlightInput(mix), d, p)
        rhs = lam * flight_accel(s, FlightInput(f1), d, p) + (1 - lam) * flight_accel(s, FlightInput(f2), d, p)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_isotropic_inertia_no_coupling(self):
        s = VehicleState(angular_velocity=(1.0, -2.0, 3.0), mode=Mode.AIR)
        acc = flight_angular_accel(s, FlightInput(0.0), np.zeros(3), unit_params())
        np.testing.assert_allclose(acc, 0.0, atol=1e-15)

    def test_pure_torque(self):
        acc = flight_angular_accel(VehicleState(mode=Mode.AIR), FlightInput(0.0, np.array([0.1, 0, 0])),
                                   np.zeros(3), unit_params())
        np.testing.assert_allclose(acc, (2.0, 0, 0), atol=1e-12)

    def test_gyroscopic_coupling(self):
        J = (0.02, 0.03, 0.04)
        p = unit_params(J=J)
        s = VehicleState(angular_velocity=(1.0, 2.0, 3.0), mode=Mode.AIR)
        acc = flight_angular_accel(s, FlightInput(0.0), np.zeros(3), p)
        c = np.array([(J[1] - J[2]) * 3 * 2, (J[2] - J[0]) * 1 * 3, (J[0] - J[1]) * 1 * 2])
        np.testing.assert_allclose(acc, -c / np.array(J), atol=1e-12)
        np.testing.assert_allclose(acc, (3.0, -2.0, 0.5), atol=1e-12)


class TestLand:
    def test_straight_drive(self):
        a = land_accel(VehicleState(), LandInput(1.0, 1.0), np.zeros(3), unit_params())
        np.testing.assert_allclose(a, (4, 0, 0), atol=1e-12)

    def test_rotated_frame(self):
        a = land_accel(VehicleState(attitude=(0, 0, math.pi / 2)), LandInput(1.0, 1.0), np.zeros(3), unit_params())
        np.testing.assert_allclose(a, (0, 4, 0), atol=1e-12)

    def test_resistance_in_body_frame(self):
        p = unit_params(m=2.0)
        a = land_accel(VehicleState(attitude=(0, 0, math.pi / 4)), LandInput(1.0, 0.5), (1.0, 0, 0), p)
        # drive 1.5 N per side pair * 2 along the heading, minus 1 N of drag along it, over 2 kg
        h = math.sqrt(0.5)
        np.testing.assert_allclose(a, (h, h, 0.0), atol=1e-12)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-math.pi, math.pi),
           st.tuples(*[st.floats(-5, 5)] * 3))
    def test_no_vertical_component(self, left, right, psi, d):
        a = land_accel(VehicleState(attitude=(0, 0, psi)), LandInput(left, right), d, VehicleParams())
        assert a[2] == 0.0

    def test_resistive_moment_symmetric(self):
        p = VehicleParams(a=0.15, b=0.15)
        assert resistive_moment(GroundResistance((1, 1, 1, 1), (2, 2, 2, 2)), p) == pytest.approx(0.0, abs=1e-15)

    def test_resistive_moment_rx(self):
        p = VehicleParams(w=0.2)
        assert resistive_moment(GroundResistance((0, 1, 1, 0), (0, 0, 0, 0)), p) == pytest.approx(0.2)

    def test_resistive_moment_ry(self):
        p = VehicleParams(b=0.15)
        assert resistive_moment(GroundResistance((0, 0, 0, 0), (1, 1, 0, 0)), p) == pytest.approx(0.3)

    def test_yaw_accel(self):
        assert land_yaw_accel(LandInput(1.0, 1.0), 0.0, VehicleParams()) == 0.0
        assert land_yaw_accel(LandInput(0.0, 1.0), 0.0, VehicleParams(w=0.2, J=(0.02, 0.02, 0.04))) \
            == pytest.approx(5.0)
        assert land_yaw_accel(LandInput(1.0, 1.0), 0.2, VehicleParams(J=(0.02, 0.02, 0.1))) == pytest.approx(-2.0)


class TestStep:
    def test_land_rest_is_equilibrium(self):
        s = VehicleState(position=(1, 2, 0))
        out = step(s, LandInput(), None, 0.01, VehicleParams())
        np.testing.assert_array_equal(out.position, s.position)
        assert out.time == pytest.approx(0.01)

    def test_hover_fixed_point(self):
        p = VehicleParams()
        s = VehicleState(position=(0, 0, 1), mode=Mode.AIR)
        for _ in range(100):
            s = step(s, FlightInput(p.m * p.g), None, 0.01, p)
        np.testing.assert_allclose(s.position, (0, 0, 1), atol=1e-9)

    def test_free_fall_matches_closed_form(self):
        p = VehicleParams()
        s = VehicleState(position=(0, 0, 10), mode=Mode.AIR)
        for _ in range(500):
            s = step(s, FlightInput(0.0), None, 0.002, p)
        assert s.position[2] - 10 == pytest.approx(-4.905, abs=1e-6)
        assert s.velocity[2] == pytest.approx(-9.81, abs=1e-9)

    def test_rk4_local_error_order(self):
        # constant-force motion is quadratic, so one RK4 step is exact
        p = VehicleParams()
        s = VehicleState(position=(0, 0, 5), velocity=(1, 0, 2), mode=Mode.AIR)
        out = step(s, FlightInput(3.0), None, 0.3, p)
        a = 3.0 / p.m - p.g
        assert out.position[2] == pytest.approx(5 + 2 * 0.3 + 0.5 * a * 0.09, abs=1e-12)

    def test_land_stays_on_ground(self, rng):
        p = VehicleParams()
        s = VehicleState()
        for _ in range(200):
            s = step(s, LandInput(*rng.uniform(-1.5, 1.5, 2)), Disturbances(d_air=np.array([0, 0, 50.0])), 0.01, p)
            assert s.position[2] == 0.0 and s.attitude[0] == 0.0 and s.attitude[1] == 0.0

    def test_wrong_input_type(self):
        with pytest.raises(TypeError):
            step(VehicleState(mode=Mode.AIR), LandInput(), None, 0.01, VehicleParams())

    def test_non_finite_raises(self):
        with pytest.raises(IntegrationError):
            step(VehicleState(mode=Mode.AIR), FlightInput(float("inf")), None, 0.01, VehicleParams())


class TestEnergy:
    def test_zero_rpm(self):
        assert motor_power(0.0, 1e-8) == 0.0

    def test_hand_value(self):
        assert motor_power(5000.0, 1e-8) == pytest.approx(0.25 * 5000 * 2 * math.pi / 60, rel=1e-12)
        assert motor_power(5000.0, 1e-8) == pytest.approx(130.8997, abs=1e-4)

    def test_negative_rpm_rejected(self):
        with pytest.raises(ValueError):
            motor_power(-1.0, 1e-8)

    def test_rpm_inversion(self):
        assert rpm_from_torque(0.25, 1e-8) == pytest.approx(5000.0)

    def test_hover_rpms_equal_split(self):
        p = VehicleParams()
        rpm = motor_rpms(Mode.AIR, FlightInput(p.m * p.g), p)
        assert np.all(rpm == rpm[0])
        assert p.k_torque_air * rpm[0] ** 2 == pytest.approx(p.m * p.g / 4 * p.rotor_torque_ratio)

    @given(st.floats(0, 40), st.floats(0, 40))
    def test_power_monotone_in_thrust(self, f1, f2):
        p = VehicleParams()
        lo, hi = sorted((f1, f2))
        assert input_power(Mode.AIR, FlightInput(lo), p) <= input_power(Mode.AIR, FlightInput(hi), p) + 1e-12
