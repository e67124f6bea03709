import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bimodal_nav.bounds import AccelBounds, air_bounds, land_bounds, nominal_bounds
from bimodal_nav.core import Mode, VehicleParams

vec = st.tuples(*[st.floats(-30, 30)] * 3).map(np.array)
params = st.builds(
    lambda m, fxy, fz, f2: VehicleParams(m=m, f1_max=(fxy, fxy, fz), f2_max=(f2, f2)),
    st.floats(0.2, 10), st.floats(0.1, 50), st.floats(0.1, 80), st.floats(0.1, 20))


def test_air_example():
    b = air_bounds((0, 0, -9.81), VehicleParams(m=1.0, f1_max=(5, 5, 20)))
    np.testing.assert_allclose(b.lower, (-5, -5, -9.81))
    np.testing.assert_allclose(b.upper, (5, 5, 10.19))


def test_headwind_shifts_interval():
    b = air_bounds((-2, 0, -9.81), VehicleParams(m=1.0, f1_max=(5, 5, 20)))
    assert (b.lower[0], b.upper[0]) == pytest.approx((-7, 3))


def test_zero_estimate_air():
    b = air_bounds(np.zeros(3), VehicleParams(m=1.0, f1_max=(5, 5, 20)))
    np.testing.assert_allclose(b.lower, (-5, -5, 0))
    np.testing.assert_allclose(b.upper, (5, 5, 20))


def test_land_examples():
    p = VehicleParams(m=1.0, f2_max=(3, 3))
    b = land_bounds(np.zeros(3), p)
    np.testing.assert_allclose(b.lower, (-3, -3, 0))
    np.testing.assert_allclose(b.upper, (3, 3, 0))
    b = land_bounds((-1.5, 0, 0), p)
    assert (b.lower[0], b.upper[0]) == pytest.approx((-4.5, 1.5))


def test_forward_infeasible_is_not_an_error():
    b = land_bounds((-3.1, 0, 0), VehicleParams(m=1.0, f2_max=(3, 3)))
    assert (b.lower[0], b.upper[0]) == pytest.approx((-6.1, -0.1))
    assert b.upper[0] < 0


def test_nominal_pair():
    p = VehicleParams()
    air, land = nominal_bounds(p)
    assert air.lower[2] == -p.g
    assert land.mode is Mode.LAND and np.all(land.center == 0)


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        AccelBounds((1, 0, 0), (0, 0, 0), Mode.AIR)


def test_contains_and_with_z():
    b = AccelBounds((-1, -1, 0), (1, 1, 0), Mode.LAND)
    assert b.contains((0.5, -1, 0))
    assert not b.contains((0, 0, 0.1))
    lifted = b.with_z(0.0, 5.0)
    assert lifted.contains((0, 0, 4.0))
    assert b.upper[2] == 0.0


@given(vec, vec, params)
def test_air_affine_shift(d, delta, p):
    a, b = air_bounds(d, p), air_bounds(d + delta, p)
    np.testing.assert_allclose(b.lower - a.lower, delta, atol=1e-12)
    np.testing.assert_allclose(b.upper - a.upper, delta, atol=1e-12)


@given(vec, params)
def test_constant_width(d, p):
    air, land = air_bounds(d, p), land_bounds(d, p)
    np.testing.assert_allclose(air.width, [2 * p.f1_max[0] / p.m, 2 * p.f1_max[1] / p.m, p.f1_max[2] / p.m],
                               rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(land.width[:2], 2 * np.array(p.f2_max) / p.m, rtol=1e-12, atol=1e-12)
    assert land.lower[2] == land.upper[2] == 0.0
    assert np.all(air.lower <= air.upper) and np.all(land.lower <= land.upper)
