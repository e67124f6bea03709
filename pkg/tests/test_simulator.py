import math

import numpy as np
import pytest

from bimodal_nav.config import GainSpec, ResistanceZone, ScenarioConfig, WindZone, from_dict
from bimodal_nav.core import Mode, VehicleParams, VehicleState, vec3
from bimodal_nav.dynamics import motor_power
from bimodal_nav.simulator import (LOG_COLUMNS, DisturbanceField, Reference, SimLog, compute_metrics,
                                   run_scenario, sample_disturbance, track_air, track_land,
                                   true_disturbance_accel, zone_weight)

P = VehicleParams()
GAINS = GainSpec()


def still(pos=(0, 0, 0)):
    return Reference(np.array(pos, float), vec3(), vec3())


def synthetic_log(n, dt, rpm=(0, 0, 0, 0), mode="Air", offset=0.0):
    rows = []
    for i in range(n):
        row = [0.0] * len(LOG_COLUMNS)
        row[LOG_COLUMNS.index("t")] = i * dt
        row[LOG_COLUMNS.index("x")] = offset
        for j, r in enumerate(rpm):
            row[LOG_COLUMNS.index(f"rpm{j + 1}")] = float(r)
        row[LOG_COLUMNS.index("mode")] = mode
        row[LOG_COLUMNS.index("saturated")] = False
        rows.append(row)
    return SimLog(dt, rows)


class TestDisturbances:
    def test_zone_weight_indicator(self):
        assert zone_weight((1, 1, 1), (0, 0, 0), (2, 2, 2)) == 1.0
        assert zone_weight((2, 1, 1), (0, 0, 0), (2, 2, 2)) == 1.0
        assert zone_weight((2.01, 1, 1), (0, 0, 0), (2, 2, 2)) == 0.0

    def test_shared_face_blends_to_one(self, rng):
        # two boxes sharing the x = 2 face: weights sum to one across the seam
        for x in rng.uniform(1.0, 3.0, 50):
            w = (zone_weight((x, 1, 1), (0, -5, -5), (2, 5, 5), 1.0)
                 + zone_weight((x, 1, 1), (2, -5, -5), (4, 5, 5), 1.0))
            assert w == pytest.approx(1.0, abs=1e-12)
        assert zone_weight((2, 1, 1), (0, -5, -5), (2, 5, 5), 1.0) == pytest.approx(0.5)

    def test_wind_inside_and_outside(self):
        f = DisturbanceField([WindZone([0, 0, 0], [2, 2, 2], [-3.0, 0.0, 0.0])])
        np.testing.assert_array_equal(f.wind((1, 1, 1)), (-3, 0, 0))
        np.testing.assert_array_equal(f.wind((5, 1, 1)), (0, 0, 0))

    def test_gust_oscillates_along_force(self):
        f = DisturbanceField([WindZone([0, 0, 0], [2, 2, 2], [-3.0, 0.0, 0.0], gust_amplitude=1.0,
                                       gust_frequency=1.0)])
        np.testing.assert_allclose(f.wind((1, 1, 1), t=0.25), (-4, 0, 0), atol=1e-12)

    def test_friction_total_at_one_metre_per_second(self):
        f = DisturbanceField(resistance_zones=[ResistanceZone([0, 0], [10, 10], mu=0.3)])
        p = VehicleParams(m=2.0)
        s = VehicleState(position=(5, 5, 0), velocity=(1, 0, 0), mode=Mode.LAND)
        d_air, res = sample_disturbance(f, s, p)
        assert np.all(d_air == 0)
        assert sum(res.rx) == pytest.approx(0.3 * 2 * 9.81, rel=1e-6)
        # the lumped acceleration points against the motion
        assert true_disturbance_accel(s, d_air, res, p)[0] == pytest.approx(-0.3 * 9.81, rel=1e-6)

    def test_no_ground_resistance_in_flight(self):
        f = DisturbanceField(mu=0.5)
        _, res = sample_disturbance(f, VehicleState(position=(0, 0, 1), velocity=(1, 0, 0), mode=Mode.AIR), P)
        assert sum(res.rx) == 0.0

    def test_degenerate_zone_rejected(self):
        cfg = ScenarioConfig(wind_zones=[WindZone([0, 0, 0], [0, 1, 1], [1, 0, 0])])
        with pytest.raises(ValueError):
            DisturbanceField.from_config(cfg)


class TestTracking:
    def test_hover_inversion(self):
        s = VehicleState(position=(0, 0, 1), mode=Mode.AIR)
        cmd = track_air(still((0, 0, 1)), s, None, GAINS, P)
        assert cmd.thrust == pytest.approx(P.m * P.g)
        np.testing.assert_allclose(cmd.attitude, 0.0, atol=1e-12)
        assert not cmd.saturated

    def test_forward_acceleration_pitch(self):
        s = VehicleState(position=(0, 0, 1), mode=Mode.AIR)
        ref = Reference(vec3(0, 0, 1), vec3(), vec3(1, 0, 0))
        cmd = track_air(ref, s, None, GAINS, P)
        assert math.degrees(cmd.attitude[1]) == pytest.approx(math.degrees(math.atan(1 / 9.81)), abs=1e-9)

    def test_saturation_flag(self):
        s = VehicleState(position=(0, 0, 1), mode=Mode.AIR)
        cmd = track_air(Reference(vec3(0, 0, 1), vec3(), vec3(50, 0, 0)), s, None, GAINS, P)
        assert cmd.saturated and cmd.thrust <= P.f1_max[2] + 1e-9

    def test_land_straight_reference(self):
        s = VehicleState(mode=Mode.LAND)
        cmd = track_land(still(), s, None, GAINS, P)
        assert cmd.input.left == cmd.input.right == 0.0

    def test_land_heading_error_sign(self):
        s = VehicleState(attitude=(0, 0, -0.1), mode=Mode.LAND)
        ref = Reference(vec3(), vec3(0.5, 0, 0), vec3())
        ref.position = s.position + 0.0
        cmd = track_land(ref, s, None, GAINS, P)
        assert cmd.input.right > cmd.input.left

    def test_land_reference_ahead(self):
        s = VehicleState(mode=Mode.LAND)
        cmd = track_land(still((1, 0, 0)), s, None, GAINS, P)
        assert cmd.input.left + cmd.input.right > 0


class TestMetrics:
    def test_empty(self):
        m = compute_metrics(SimLog(0.01), P)
        assert m.empty and m.time_s == m.energy_wh == m.rmse_m == 0.0

    def test_single_motor_energy(self):
        p = VehicleParams(k_torque_air=1e-8)
        log = synthetic_log(1000, 0.01, rpm=(5000, 0, 0, 0))
        assert motor_power(5000, 1e-8) == pytest.approx(130.8997, abs=1e-4)
        assert compute_metrics(log, p).energy_wh == pytest.approx(0.36361, abs=1e-6)

    def test_rmse(self):
        assert compute_metrics(synthetic_log(10, 0.01), P).rmse_m == 0.0
        # x is 0.3 off the zero reference on every row
        assert compute_metrics(synthetic_log(10, 0.01, offset=0.3), P).rmse_m == pytest.approx(0.3)


def empty_land_config(**sim):
    return from_dict({
        "name": "straight",
        "map": {"size": [8.0, 6.0, 2.0], "resolution": 0.2},
        "start": {"position": [1.0, 3.0, 0.0], "mode": "Land"},
        "goal": [6.0, 3.0, 0.0],
        "ground": {"mu": 0.0},
        "sim": {"timeout": 15.0, **sim},
    })


@pytest.fixture(scope="module")
def straight():
    return run_scenario(empty_land_config())


class TestClosedLoop:
    def test_reaches_goal_on_the_ground(self, straight):
        log, m = straight
        assert m.success and m.rmse_m < 0.05
        assert np.all(log.column("z") == 0.0)
        assert set(log.modes) == {Mode.LAND.value}
        np.testing.assert_allclose(np.diff(log.time), 0.01, atol=1e-9)

    def test_energy_monotone(self, straight):
        log, _ = straight
        power = log.column("power_w")
        spinning = np.any(log.rpms > 0, axis=1)
        assert spinning.any()
        assert np.all(power[spinning] > 0) and np.all(power[~spinning] == 0)

    def test_planner_disabled_times_out(self):
        log, m = run_scenario(empty_land_config(planner_enabled=False, timeout=2.0))
        assert not m.success and log.failure == "timeout"

    def test_csv_round_trip(self, straight, tmp_path):
        log, _ = straight
        log.to_csv(tmp_path / "log.csv")
        back = SimLog.from_csv(tmp_path / "log.csv")
        assert back.rows == log.rows and back.dt == pytest.approx(log.dt)

    def test_observer_tracks_constant_wind(self):
        cfg = from_dict({
            "map": {"size": [4.0, 4.0, 3.0], "resolution": 0.2},
            "start": {"position": [2.0, 2.0, 1.5], "mode": "Air"},
            "goal": [3.0, 2.0, 1.5],
            "wind_zones": [{"min": [-1, -1, -1], "max": [5, 5, 5], "force": [-4.0, 2.0, 0.0]}],
            "sim": {"planner_enabled": False, "timeout": 3.0, "settle_time": 0.0},
        })
        log, _ = run_scenario(cfg)
        d_hat = log.columns("dhat_x", "dhat_y", "dhat_z")
        d_true = log.columns("dtrue_x", "dtrue_y", "dtrue_z")
        tail = slice(len(log) // 2, None)
        err = np.mean(np.linalg.norm(d_hat[tail] - d_true[tail], axis=1))
        assert err < 0.05 * np.mean(np.linalg.norm(d_true[tail], axis=1)) + 0.02

    def test_saturation_shows_as_tracking_gap(self, fixture_runs):
        log, _, _ = fixture_runs[("air2land", "fixed_bounds")]
        sat = log.column("saturated").astype(bool)
        gap = np.linalg.norm(log.columns("acmd_x", "acmd_y", "acmd_z") - log.columns("aact_x", "aact_y", "aact_z"),
                             axis=1)
        assert sat.any()
        assert np.median(gap[sat]) > np.median(gap[~sat])


def test_leftright_adaptive_uses_the_lee(fixture_runs):
    log, m, _ = fixture_runs[("leftright", "adaptive")]
    pos = log.position
    beside = (pos[:, 0] > 5.0) & (pos[:, 0] < 6.6)
    assert m.success and beside.any()
    assert np.all(pos[beside, 1] > 5.0)


def test_land_rows_stay_on_the_ground(fixture_runs):
    for log, _, _ in fixture_runs.values():
        land = np.array([m == Mode.LAND.value for m in log.modes])
        assert np.all(log.column("z")[land] == 0.0)
