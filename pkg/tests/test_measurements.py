import numpy as np
import pytest

from navfuse.core import FilterState, GRAVITY, euler_to_quat, quat_to_rotmat
from navfuse.events import FixType, GpsFixSample
from navfuse.geodesy import EnuOrigin, GeodeticCoord, enu_to_geodetic
from navfuse.measurements import (
    GateThresholds,
    QualityRejected,
    derive_gps_heading,
    encoder_az_model,
    encoder_model,
    encoder_vz_model,
    gps_fix_to_measurement,
    gps_heading_model,
    gps_position_model,
    gps_velocity_model,
    imu_orientation_model,
    imu_raw_model,
    implied_speed_precheck,
    radar_velocity_model,
    screen_gps_fix,
    vslam_model,
    zupt_model,
)

ORIGIN = EnuOrigin.from_geodetic(GeodeticCoord.from_degrees(45.0, -75.6, 80.0))


def h1(model, state: FilterState) -> np.ndarray:
    return np.asarray(model.h(state.as_vector()[None, :]))[0]


def fix_at(enu, stamp=0.0, **kw):
    geo = enu_to_geodetic(np.asarray(enu, dtype=float), ORIGIN)
    defaults = dict(fix_type=FixType.RTK_FLOAT, hdop=1.0, vdop=1.0,
                    satellites=9)
    defaults.update(kw)
    return GpsFixSample(stamp, geo.lat, geo.lon, geo.alt, **defaults)


class TestDefaults:
    def test_gate_table(self):
        g = GateThresholds()
        assert (g.gps_pos, g.vslam, g.heading, g.encoder, g.imu) == \
            (16.27, 22.46, 10.83, 11.34, 15.09)

    def test_positive_required(self):
        with pytest.raises(ValueError):
            GateThresholds(heading=0.0)


class TestImuRaw:
    def test_level_rest_predicts_gravity(self):
        model = imu_raw_model(0.005, 0.05, 15.09)
        z = h1(model, FilterState())
        assert np.allclose(z, [0, 0, 0, 0, 0, 9.80665])

    def test_gyro_bias_enters_prediction(self):
        state = FilterState(gyro_bias=np.array([0.008, 0, 0]))
        z = h1(imu_raw_model(0.005, 0.05, 15.09), state)
        assert np.allclose(z[:3], [0.008, 0, 0])

    def test_rolled_state_rotates_gravity(self):
        q = euler_to_quat(np.pi / 2, 0, 0)  # 90 deg roll
        z = h1(imu_raw_model(0.005, 0.05, 15.09), FilterState(quaternion=q))
        oracle = quat_to_rotmat(q).T @ GRAVITY
        assert np.allclose(z[3:], oracle, atol=1e-12)
        # gravity reaction moves to the lateral axis
        assert abs(z[4] - 9.80665) < 1e-9


class TestImuOrientation:
    def test_two_dof_without_magnetometer(self):
        model = imu_orientation_model(False, 0.02, 15.09)
        assert model.dim == 2
        assert np.allclose(h1(model, FilterState()), [0.0, 0.0])

    def test_three_dof_with_magnetometer(self):
        model = imu_orientation_model(True, 0.02, 15.09)
        assert model.dim == 3
        state = FilterState(quaternion=euler_to_quat(0.1, -0.2, 0.7))
        assert np.allclose(h1(model, state), [0.1, -0.2, 0.7], atol=1e-12)

    def test_residuals_marked_angular(self):
        assert np.all(imu_orientation_model(False, 0.02, 15.09).angular)


class TestEncoder:
    def test_straight_motion(self):
        state = FilterState(velocity=np.array([1.0, 0, 0]))
        z = h1(encoder_model(0.03, 0.03, 0.02, 11.34), state)
        assert np.allclose(z, [1, 0, 0])

    def test_yaw_rate_bias_subtracted(self):
        state = FilterState(angular_rate=np.array([0, 0, 0.1]),
                            encoder_yaw_bias=0.005)
        z = h1(encoder_model(0.03, 0.03, 0.02, 11.34), state)
        assert z[2] == pytest.approx(0.095)

    def test_bias_term_removable(self):
        state = FilterState(angular_rate=np.array([0, 0, 0.1]),
                            encoder_yaw_bias=0.005)
        z = h1(encoder_model(0.03, 0.03, 0.02, 11.34, b_ewz_enabled=False),
               state)
        assert z[2] == pytest.approx(0.1)

    def test_constraints_observe_vertical_channel(self):
        state = FilterState(velocity=np.array([1.0, 0.0, 0.3]),
                            acceleration=np.array([0.0, 0.0, -0.2]))
        assert h1(encoder_vz_model(0.05, 11.34), state)[0] == \
            pytest.approx(0.3)
        assert h1(encoder_az_model(0.5, 11.34), state)[0] == \
            pytest.approx(-0.2)


class TestGpsPosition:
    def test_unity_dop_gives_baseline_noise(self):
        z, r = gps_fix_to_measurement(fix_at([10.0, -5.0, 2.0]), ORIGIN,
                                      sigma_xy=0.8, sigma_z=1.5)
        assert np.allclose(np.diag(r), [0.64, 0.64, 2.25])
        assert np.allclose(z, [10.0, -5.0, 2.0], atol=1e-6)

    def test_hdop_scales_horizontal_variance_quadratically(self):
        _, r1 = gps_fix_to_measurement(fix_at([0, 0, 0], hdop=1.0), ORIGIN,
                                       0.8, 1.5)
        _, r2 = gps_fix_to_measurement(fix_at([0, 0, 0], hdop=2.0), ORIGIN,
                                       0.8, 1.5)
        assert r2[0, 0] == pytest.approx(4.0 * r1[0, 0])
        assert r2[2, 2] == pytest.approx(r1[2, 2])

    def test_quality_screen_blocks_low_fix_type(self):
        out = gps_fix_to_measurement(
            fix_at([0, 0, 0], fix_type=FixType.DGPS), ORIGIN, 0.8, 1.5,
            min_fix_type=FixType.RTK_FIXED)
        assert isinstance(out, QualityRejected)
        assert "DGPS" in out.reason

    def test_quality_screen_hdop_and_satellites(self):
        assert isinstance(screen_gps_fix(fix_at([0, 0, 0], hdop=9.0),
                                         FixType.GPS, 5.0, 4),
                          QualityRejected)
        assert isinstance(screen_gps_fix(fix_at([0, 0, 0], satellites=3),
                                         FixType.GPS, 5.0, 4),
                          QualityRejected)

    def test_error_bounds_take_priority(self):
        fix = fix_at([0, 0, 0], err_horz=1.96, err_vert=3.92)
        _, r = gps_fix_to_measurement(fix, ORIGIN, 0.8, 1.5)
        assert np.allclose(np.diag(r), [1.0, 1.0, 4.0])

    def test_full_covariance_takes_priority(self):
        fix = fix_at([0, 0, 0], err_horz=1.96, err_vert=3.92)
        fix.covariance = np.diag([0.01, 0.02, 0.03])
        _, r = gps_fix_to_measurement(fix, ORIGIN, 0.8, 1.5)
        assert np.allclose(np.diag(r), [0.01, 0.02, 0.03])

    def test_lever_arm_shifts_prediction_when_validated(self):
        lever = np.array([0.5, 0.0, 0.3])
        state = FilterState(position=np.array([1.0, 2.0, 0.0]),
                            quaternion=euler_to_quat(0, 0, np.pi / 2))
        plain = gps_position_model(np.eye(3), 16.27)
        shifted = gps_position_model(np.eye(3), 16.27, lever_offset=lever)
        assert np.allclose(h1(plain, state), [1, 2, 0])
        assert np.allclose(h1(shifted, state),
                           [1.0, 2.5, 0.3], atol=1e-12)


class TestGpsHeading:
    def test_due_east_course_is_zero_yaw(self):
        out = derive_gps_heading(np.zeros(2), 0.0, np.array([5.0, 0.0]), 1.0,
                                 horizontal_var=0.25)
        assert out is not None
        yaw, var = out
        assert yaw == pytest.approx(0.0)
        assert var > 0

    def test_below_speed_threshold_suppressed(self):
        assert derive_gps_heading(np.zeros(2), 0.0, np.array([3.0, 0.0]),
                                  10.0, 0.25, min_speed=0.5) is None

    def test_below_baseline_suppressed(self):
        assert derive_gps_heading(np.zeros(2), 0.0, np.array([0.5, 0.0]),
                                  0.2, 0.25, min_baseline=2.0) is None

    def test_variance_shrinks_with_speed(self):
        slow = derive_gps_heading(np.zeros(2), 0.0, np.array([2.5, 0.0]),
                                  2.0, 0.25)[1]
        fast = derive_gps_heading(np.zeros(2), 0.0, np.array([10.0, 0.0]),
                                  2.0, 0.25)[1]
        assert fast < slow

    def test_model_reads_state_yaw(self):
        model = gps_heading_model(0.04, 10.83)
        state = FilterState(quaternion=euler_to_quat(0, 0, 1.1))
        assert h1(model, state)[0] == pytest.approx(1.1)
        assert model.angular[0]


class TestVelocityModels:
    def test_gps_velocity_world_frame(self):
        model = gps_velocity_model(0.3, 16.27)
        assert np.allclose(h1(model, FilterState()), [0, 0])
        state = FilterState(velocity=np.array([1.0, 0, 0]))
        assert np.allclose(h1(model, state), [1, 0])
        yawed = FilterState(velocity=np.array([1.0, 0, 0]),
                            quaternion=euler_to_quat(0, 0, np.pi / 2))
        assert np.allclose(h1(model, yawed), [0, 1], atol=1e-12)

    def test_radar_body_frame_without_bias(self):
        model = radar_velocity_model(0.1, 11.34)
        state = FilterState(velocity=np.array([2.0, 0.1, 0.0]),
                            encoder_yaw_bias=0.5)
        assert np.allclose(h1(model, state), [2.0, 0.1])


class TestVslam:
    def test_pose_prediction(self):
        state = FilterState(position=np.array([1.0, 2.0, 3.0]),
                            quaternion=euler_to_quat(0.1, 0.2, 0.3))
        z = h1(vslam_model(np.eye(6) * 0.01, 22.46), state)
        assert np.allclose(z, [1, 2, 3, 0.1, 0.2, 0.3], atol=1e-12)

    def test_covariance_floors(self):
        r = np.diag([1e-8, 1e-8, 1e-8, 1e-10, 1e-10, 1e-10])
        model = vslam_model(r, 22.46)
        assert np.allclose(np.diag(model.r)[:3], 1e-4)
        assert np.allclose(np.diag(model.r)[3:], 1e-6)

    def test_only_yaw_component_wraps(self):
        model = vslam_model(np.eye(6) * 0.01, 22.46)
        assert list(model.angular) == [False] * 5 + [True]


class TestZupt:
    def test_observes_all_velocity_axes(self):
        state = FilterState(velocity=np.array([0.1, -0.2, 0.05]))
        model = zupt_model(0.01, 16.27)
        assert np.allclose(h1(model, state), [0.1, -0.2, 0.05])
        assert np.allclose(model.r, np.eye(3) * 1e-4)


class TestImpliedSpeedPrecheck:
    def test_slow_offset_passes(self):
        # 720 m over 211 s is only ~3.4 m/s, below the 20 m/s limit
        ok, implied = implied_speed_precheck(
            np.array([720.0, 0, 0]), np.zeros(3), 211.0, 20.0)
        assert ok
        assert implied == pytest.approx(720.0 / 211.0, rel=1e-9)

    def test_fast_offset_rejected(self):
        ok, implied = implied_speed_precheck(
            np.array([100.0, 0, 0]), np.zeros(3), 1.0, 20.0)
        assert not ok and implied == pytest.approx(100.0)

    def test_disabled_always_passes(self):
        ok, _ = implied_speed_precheck(np.array([1e6, 0, 0]), np.zeros(3),
                                       1.0, 20.0, enabled=False)
        assert ok


class TestZeroInnovationProperty:
    def test_every_model_zeroes_out_on_matching_state(self, rng):
        from conftest import random_unit_quat
        for _ in range(30):
            vec = rng.normal(size=23) * 0.5
            vec[3:7] = random_unit_quat(rng)
            state = FilterState.from_vector(vec)
            for model in (
                imu_raw_model(0.005, 0.05, 15.09),
                imu_orientation_model(False, 0.02, 15.09),
                imu_orientation_model(True, 0.02, 15.09),
                encoder_model(0.03, 0.03, 0.02, 11.34),
                encoder_vz_model(0.05, 11.34),
                encoder_az_model(0.5, 11.34),
                gps_position_model(np.eye(3), 16.27),
                gps_heading_model(0.04, 10.83),
                gps_velocity_model(0.3, 16.27),
                radar_velocity_model(0.1, 11.34),
                vslam_model(np.eye(6) * 0.01, 22.46),
                zupt_model(0.01, 16.27),
            ):
                z = h1(model, state)
                assert np.allclose(h1(model, state) - z, 0.0)
                assert z.shape == (model.dim,)
