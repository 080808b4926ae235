import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navfuse.core import (
    FilterState,
    NumericalError,
    ProcessNoiseConfig,
    QUAT,
    STATE_DIM,
    euler_to_quat,
    quat_canonical,
    quat_exp,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_euler,
    quat_to_rotmat,
    rotation_distance,
    wrap_angle,
    yaw_variance,
)

from conftest import random_unit_quat


class TestQuatExp:
    def test_zero_rate_is_identity(self):
        q = quat_exp(np.zeros(3), 0.01)
        assert np.allclose(q, [1, 0, 0, 0])

    def test_pi_about_z(self):
        # theta = pi/2 forces (cos pi/2, 0, 0, sin pi/2)
        q = quat_exp(np.array([0.0, 0.0, np.pi]), 1.0)
        assert np.allclose(q, [0, 0, 0, 1], atol=1e-15)

    def test_branches_agree_near_threshold(self):
        # both branch formulas evaluated at the same small rotation
        omega = np.array([0.02, 0.0, 0.0])
        dt = 0.01
        exact = quat_exp(omega, dt)
        small = quat_normalize(np.concatenate([[1.0], 0.5 * dt * omega]))
        assert np.max(np.abs(exact - small)) <= 1e-12

    def test_small_branch_engages_below_threshold(self):
        omega = np.array([5e-9, 0.0, 0.0])
        q = quat_exp(omega, 0.01)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12
        assert q[1] == pytest.approx(0.5 * 0.01 * 5e-9, rel=1e-9)

    def test_fixed_axis_composition(self):
        omega = np.array([0.3, -0.2, 0.9])
        q1 = quat_mul(quat_exp(omega, 0.4), quat_exp(omega, 0.7))
        q2 = quat_exp(omega, 1.1)
        assert rotation_distance(q1, q2) <= 1e-10

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericalError):
            quat_exp(np.array([np.nan, 0, 0]), 0.01)
        with pytest.raises(ValueError):
            quat_exp(np.zeros(3), -0.1)


class TestQuatMul:
    def test_identity_element(self, rng):
        q = random_unit_quat(rng)
        assert np.allclose(quat_mul([1, 0, 0, 0], q), q)

    def test_double_z_flip(self):
        out = quat_mul([0, 0, 0, 1], [0, 0, 0, 1])
        assert np.allclose(out, [-1, 0, 0, 0])
        # -identity is the identity rotation
        assert rotation_distance(out, np.array([1, 0, 0, 0])) < 1e-12

    def test_composition_matches_rotation_matrices(self, rng):
        for _ in range(50):
            a = random_unit_quat(rng)
            b = random_unit_quat(rng)
            v = rng.normal(size=3)
            composed = quat_rotate(quat_mul(a, b), v)
            sequential = quat_rotate(a, quat_rotate(b, v))
            assert np.allclose(composed, sequential, atol=1e-12)
            oracle = quat_to_rotmat(a) @ quat_to_rotmat(b) @ v
            assert np.allclose(composed, oracle, atol=1e-12)


class TestRotate:
    def test_identity(self):
        assert np.allclose(quat_rotate([1, 0, 0, 0], [1.0, 2.0, 3.0]),
                           [1, 2, 3])

    def test_quarter_turn_about_z(self):
        q = euler_to_quat(0, 0, np.pi / 2)
        assert np.allclose(quat_rotate(q, [1.0, 0, 0]), [0, 1, 0],
                           atol=1e-12)

    def test_matches_matrix_for_many_quats(self, rng):
        qs = random_unit_quat(rng, 10_000)
        v = rng.normal(size=3)
        fast = quat_rotate(qs, v)
        for i in range(0, 10_000, 499):
            assert np.allclose(fast[i], quat_to_rotmat(qs[i]) @ v,
                               atol=1e-12)
        norms = np.linalg.norm(fast, axis=-1)
        assert np.allclose(norms, np.linalg.norm(v), atol=1e-9)


class TestStateVector:
    def test_flatten_roundtrip_exact(self, rng):
        vec = rng.normal(size=STATE_DIM)
        vec[QUAT] = random_unit_quat(rng)
        state = FilterState.from_vector(vec, stamp=12.5, normalize=False)
        assert np.array_equal(state.as_vector(), vec)
        assert state.stamp == 12.5

    def test_dimension_is_23(self):
        assert FilterState().as_vector().shape == (STATE_DIM,) == (23,)

    def test_validate_names_offender(self):
        state = FilterState()
        state.velocity = np.array([0.0, np.inf, 0.0])
        with pytest.raises(NumericalError, match="velocity"):
            state.validate()

    def test_validate_checks_quaternion_norm(self):
        state = FilterState()
        state.quaternion = np.array([1.0, 0.0, 0.0, 1e-3])
        with pytest.raises(NumericalError, match="quaternion"):
            state.validate()


class TestAngles:
    @given(st.floats(-50.0, 50.0))
    @settings(max_examples=200, deadline=None)
    def test_wrap_range(self, a):
        w = wrap_angle(a)
        assert -np.pi < w <= np.pi
        assert abs(np.sin(w) - np.sin(a)) < 1e-9

    def test_wrap_picks_short_way(self):
        # 179 deg measured vs -179 deg predicted: residual is -2 deg
        res = wrap_angle(np.radians(179.0) - np.radians(-179.0))
        assert res == pytest.approx(np.radians(-2.0), abs=1e-12)

    def test_euler_roundtrip(self, rng):
        for _ in range(100):
            roll, pitch, yaw = rng.uniform(
                [-np.pi, -np.pi / 2 + 0.05, -np.pi],
                [np.pi, np.pi / 2 - 0.05, np.pi])
            q = euler_to_quat(roll, pitch, yaw)
            r2, p2, y2 = quat_to_euler(q)
            assert abs(wrap_angle(r2 - roll)) < 1e-10
            assert abs(p2 - pitch) < 1e-10
            assert abs(wrap_angle(y2 - yaw)) < 1e-10

    def test_canonical_w_nonnegative(self, rng):
        for _ in range(20):
            q = quat_canonical(random_unit_quat(rng))
            assert q[0] >= 0.0


class TestYawVariance:
    def test_matches_monte_carlo(self, rng):
        q0 = euler_to_quat(0.05, -0.1, 0.7)
        sigma = 1e-3
        cov = np.eye(4) * sigma**2
        predicted = yaw_variance(q0, cov)
        samples = q0 + rng.normal(0, sigma, size=(200_000, 4))
        samples /= np.linalg.norm(samples, axis=-1, keepdims=True)
        yaws = np.array([quat_to_euler(s)[2] for s in samples[:20_000]])
        mc = np.var(yaws)
        assert predicted == pytest.approx(mc, rel=0.2)


class TestProcessNoiseConfig:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            ProcessNoiseConfig(q_position=-1.0)

    def test_rejects_deflation(self):
        with pytest.raises(ValueError):
            ProcessNoiseConfig(coast_position_inflation=0.5)
