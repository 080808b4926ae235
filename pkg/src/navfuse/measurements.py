"""Measurement models for every sensor path, plus gating helpers.

Each model bundles a batched measurement function ``h`` (rows of flat state
vectors -> rows of measurement vectors), its noise matrix, an angular mask
selecting components whose residuals wrap at +-pi, a chi-squared gate
threshold, and the floor used when the noise adapts online.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .core import (
    ACC,
    ACCEL_BIAS,
    ENC_YAW_BIAS,
    GRAVITY,
    GYRO_BIAS,
    OMEGA,
    POS,
    QUAT,
    VEL,
    quat_rotate,
    quat_rotate_inv,
)
from .events import FixType, GpsFixSample
from .geodesy import EnuOrigin, geodetic_to_enu
from .ukf import gate  # noqa: F401  (gating lives with the engine, same surface)

#: default chi-squared gate thresholds per sensor path
@dataclass(frozen=True)
class GateThresholds:
    gps_pos: float = 16.27   # chi2(3, 0.999)
    vslam: float = 22.46     # chi2(6, 0.999)
    heading: float = 10.83   # chi2(1, 0.999)
    encoder: float = 11.34   # chi2(3, 0.99)
    imu: float = 15.09       # shared across all IMU paths
    zupt: float = 16.27

    def __post_init__(self):
        for name in ("gps_pos", "vslam", "heading", "encoder", "imu", "zupt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"gate threshold {name} must be > 0")


@dataclass
class MeasurementModel:
    """One measurement path the engine can consume.

    ``r`` is replaced atomically between updates when the path adapts;
    ``r_floor`` bounds its diagonal from below.
    """

    name: str
    dim: int
    h: Callable[[np.ndarray], np.ndarray]
    r: np.ndarray
    gate: float
    angular: np.ndarray = None
    adaptive: bool = False
    r_floor: np.ndarray = None

    def __post_init__(self):
        self.r = np.atleast_2d(np.asarray(self.r, dtype=float))
        if self.angular is None:
            self.angular = np.zeros(self.dim, dtype=bool)
        self.wraps = bool(np.any(self.angular))
        if self.r_floor is None:
            self.r_floor = np.diag(self.r).copy()
        if self.gate <= 0:
            raise ValueError("gate threshold must be > 0")
        if np.any(np.diag(self.r) < self.r_floor - 1e-15):
            raise ValueError("noise floor exceeds configured R diagonal")


@dataclass
class LeverArm:
    """Body-frame base->antenna offset; applied only once heading has been
    independently validated (yaw variance below threshold, sustained)."""

    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_var_threshold: float = 0.05
    hold_s: float = 5.0


@dataclass(frozen=True)
class QualityRejected:
    """A GPS fix screened out before any filter interaction."""

    reason: str


def euler_rows(q: np.ndarray) -> np.ndarray:
    """Vectorized ZYX (roll, pitch, yaw) extraction over quaternion rows."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    roll = np.arctan2(2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y))
    pitch = np.arcsin(np.clip(-2.0 * (x * z - w * y), -1.0, 1.0))
    yaw = np.arctan2(2.0 * (x * y + w * z), 1.0 - 2.0 * (y * y + z * z))
    return np.stack([roll, pitch, yaw], axis=-1)


def imu_raw_model(sigma_gyro: float, sigma_accel: float,
                  gate: float) -> MeasurementModel:
    """6-DOF raw IMU: rates plus bias, accelerations plus bias and the
    gravity reaction rotated into the body frame."""

    def h(states: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(states)
        pred_gyro = x[:, OMEGA] + x[:, GYRO_BIAS]
        grav_body = quat_rotate_inv(x[:, QUAT], GRAVITY)
        pred_accel = x[:, ACC] + x[:, ACCEL_BIAS] + grav_body
        return np.concatenate([pred_gyro, pred_accel], axis=-1)

    r = np.diag([sigma_gyro**2] * 3 + [sigma_accel**2] * 3)
    return MeasurementModel("imu_raw", 6, h, r, gate)


def imu_orientation_model(has_magnetometer: bool, sigma_orient: float,
                          gate: float) -> MeasurementModel:
    """Roll/pitch (2-DOF) for 6-axis IMUs; roll/pitch/yaw (3-DOF) with a
    magnetometer.  Without one, yaw stays unobservable from the IMU."""
    dim = 3 if has_magnetometer else 2

    def h(states: np.ndarray) -> np.ndarray:
        rpy = euler_rows(np.atleast_2d(states)[:, QUAT])
        return rpy if has_magnetometer else rpy[:, :2]

    r = np.eye(dim) * sigma_orient**2
    name = "imu_orientation_3dof" if has_magnetometer else "imu_orientation"
    return MeasurementModel(name, dim, h, r, gate,
                            angular=np.ones(dim, dtype=bool))


def encoder_model(sigma_vx: float, sigma_vy: float, sigma_wz: float,
                  gate: float, b_ewz_enabled: bool = True) -> MeasurementModel:
    """3-DOF wheel odometry: body planar velocity and yaw rate with the
    encoder yaw-rate bias subtracted from the predicted reading."""

    def h(states: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(states)
        wz = x[:, OMEGA.start + 2]
        if b_ewz_enabled:
            wz = wz - x[:, ENC_YAW_BIAS]
        return np.stack([x[:, VEL.start], x[:, VEL.start + 1], wz], axis=-1)

    r = np.diag([sigma_vx**2, sigma_vy**2, sigma_wz**2])
    return MeasurementModel("encoder", 3, h, r, gate)


def encoder_vz_model(sigma: float, gate: float) -> MeasurementModel:
    """Non-holonomic ground constraint on body vertical velocity."""

    def h(states: np.ndarray) -> np.ndarray:
        return np.atleast_2d(states)[:, VEL.start + 2 : VEL.start + 3]

    return MeasurementModel("encoder_vz", 1, h, np.array([[sigma**2]]), gate,
                            adaptive=True)


def encoder_az_model(sigma: float, gate: float) -> MeasurementModel:
    """Constraint on body vertical acceleration; keeps local-gravity
    mismatch from leaking into the vertical channel through the
    acceleration state."""

    def h(states: np.ndarray) -> np.ndarray:
        return np.atleast_2d(states)[:, ACC.start + 2 : ACC.start + 3]

    return MeasurementModel("encoder_az", 1, h, np.array([[sigma**2]]), gate,
                            adaptive=True)


def screen_gps_fix(
    fix: GpsFixSample,
    min_fix_type: FixType,
    max_hdop: float,
    min_satellites: int,
) -> Optional[QualityRejected]:
    """Receiver-quality screen applied before any filter interaction."""
    if fix.fix_type < min_fix_type:
        return QualityRejected(
            f"fix type {fix.fix_type.name} below {FixType(min_fix_type).name}"
        )
    if fix.hdop is not None and fix.hdop > max_hdop:
        return QualityRejected(f"hdop {fix.hdop} above {max_hdop}")
    if fix.satellites is not None and fix.satellites < min_satellites:
        return QualityRejected(
            f"{fix.satellites} satellites below {min_satellites}"
        )
    return None


def gps_fix_to_measurement(
    fix: GpsFixSample,
    origin: EnuOrigin,
    sigma_xy: float,
    sigma_z: float,
    min_fix_type: FixType = FixType.GPS,
    max_hdop: float = 10.0,
    min_satellites: int = 4,
    use_gps_fix_fields: bool = True,
) -> Union[tuple[np.ndarray, np.ndarray], QualityRejected]:
    """Screen a fix and construct its ENU measurement and noise.

    Covariance source priority: a full 3x3 matrix when supplied, else 95% CI
    error bounds (converted to variance via sigma = err/1.96), else the
    HDOP/VDOP scaling of the configured baseline noise.
    """
    rejected = screen_gps_fix(fix, min_fix_type, max_hdop, min_satellites)
    if rejected is not None:
        return rejected
    from .geodesy import GeodeticCoord

    z = geodetic_to_enu(GeodeticCoord(fix.lat, fix.lon, fix.alt), origin)
    if fix.covariance is not None:
        r = np.asarray(fix.covariance, dtype=float).reshape(3, 3)
    elif (use_gps_fix_fields and fix.err_horz is not None
          and fix.err_vert is not None):
        sh = fix.err_horz / 1.96
        sv = fix.err_vert / 1.96
        r = np.diag([sh**2, sh**2, sv**2])
    else:
        r = np.diag(
            [
                (sigma_xy * fix.hdop) ** 2,
                (sigma_xy * fix.hdop) ** 2,
                (sigma_z * fix.vdop) ** 2,
            ]
        )
    return z, r


def gps_position_model(r: np.ndarray, gate: float,
                       lever_offset: Optional[np.ndarray] = None
                       ) -> MeasurementModel:
    """3-DOF ENU position; the predicted measurement is shifted by the
    rotated lever arm when heading has been validated."""

    def h(states: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(states)
        pos = x[:, POS]
        if lever_offset is not None:
            pos = pos + quat_rotate(x[:, QUAT], lever_offset)
        return pos

    return MeasurementModel("gps_pos", 3, h, r, gate, adaptive=True)


def derive_gps_heading(
    prev_xy: np.ndarray,
    prev_stamp: float,
    cur_xy: np.ndarray,
    cur_stamp: float,
    horizontal_var: float,
    min_baseline: float = 2.0,
    min_speed: float = 0.5,
    sigma_floor: float = 0.05,
) -> Optional[tuple[float, float]]:
    """Course-over-ground yaw from two accepted fixes.

    Returns (yaw, variance) or None when the baseline or implied ground
    speed is too small.  The variance follows a (sigma_v / speed)^2 model
    with sigma_v taken from the fixes' horizontal displacement noise, so it
    loosens automatically at low speed.
    """
    dt = cur_stamp - prev_stamp
    if dt <= 0.0:
        return None
    delta = np.asarray(cur_xy, dtype=float) - np.asarray(prev_xy, dtype=float)
    baseline = float(np.hypot(delta[0], delta[1]))
    if baseline < min_baseline:
        return None
    speed = baseline / dt
    if speed < min_speed:
        return None
    yaw = float(np.arctan2(delta[1], delta[0]))
    sigma_v = np.sqrt(horizontal_var) / dt
    sigma_yaw = max(sigma_floor, sigma_v / speed)
    return yaw, sigma_yaw**2


def gps_heading_model(variance: float, gate: float) -> MeasurementModel:
    """1-DOF yaw from GPS course over ground.  This is the path that makes
    the encoder yaw-rate bias observable through the cross-covariance."""

    def h(states: np.ndarray) -> np.ndarray:
        return euler_rows(np.atleast_2d(states)[:, QUAT])[:, 2:3]

    return MeasurementModel("gps_heading", 1, h, np.array([[variance]]), gate,
                            angular=np.array([True]))


def gps_velocity_model(sigma: float, gate: float) -> MeasurementModel:
    """2-DOF east/north world velocity from receiver Doppler."""

    def h(states: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(states)
        return quat_rotate(x[:, QUAT], x[:, VEL])[:, :2]

    return MeasurementModel("gps_vel", 2, h, np.eye(2) * sigma**2, gate,
                            adaptive=True)


def radar_velocity_model(sigma: float, gate: float) -> MeasurementModel:
    """2-DOF body-frame velocity from radar Doppler: same shape as the
    encoder velocity but independent of wheel contact, so no yaw-rate bias
    term and no ground constraints attached."""

    def h(states: np.ndarray) -> np.ndarray:
        return np.atleast_2d(states)[:, VEL.start : VEL.start + 2]

    return MeasurementModel("radar_vel", 2, h, np.eye(2) * sigma**2, gate,
                            adaptive=True)


def vslam_model(r: np.ndarray, gate: float, pos_floor: float = 0.01,
                orient_floor: float = 0.001) -> MeasurementModel:
    """6-DOF pose: position plus ZYX Euler angles, yaw residual wrapped.

    Supplied covariance diagonals are floored to keep degenerate SLAM noise
    estimates from collapsing the update.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float)).copy()
    floor = np.array([pos_floor**2] * 3 + [orient_floor**2] * 3)
    idx = np.arange(6)
    r[idx, idx] = np.maximum(np.diag(r), floor)

    def h(states: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(states)
        return np.concatenate([x[:, POS], euler_rows(x[:, QUAT])], axis=-1)

    angular = np.array([False, False, False, False, False, True])
    return MeasurementModel("vslam", 6, h, r, gate, angular=angular)


def zupt_model(sigma: float, gate: float) -> MeasurementModel:
    """Zero-velocity pseudo-measurement on all three body velocity axes."""

    def h(states: np.ndarray) -> np.ndarray:
        return np.atleast_2d(states)[:, VEL]

    return MeasurementModel("zupt", 3, h, np.eye(3) * sigma**2, gate)


def implied_speed_precheck(
    z_pos: np.ndarray,
    predicted_pos: np.ndarray,
    dt_since_last_accept: float,
    max_speed: float = 20.0,
    enabled: bool = True,
) -> tuple[bool, float]:
    """Velocity-consistency screen upstream of the chi-squared gate.

    Rejects a position measurement whose offset from the predicted position
    implies a travel speed above ``max_speed`` over the elapsed time since
    the last accepted fix.  Disabled by default.
    """
    if not enabled:
        return True, 0.0
    if dt_since_last_accept <= 0.0:
        return True, 0.0
    offset = float(
        np.linalg.norm(np.asarray(z_pos) - np.asarray(predicted_pos))
    )
    implied = offset / dt_since_last_accept
    return implied <= max_speed, implied
