"""Event-driven fusion pipeline: ordering, gating policy, and mode logic.

All sensor callbacks funnel into ``ingest`` and are processed strictly in
arrival order by a single consumer; timestamp disorder from delayed sensors
is handled by snapshot replay, so the whole pipeline is deterministic for a
recorded event sequence.  Each primary-IMU event produces one prediction
step plus that sensor's updates, so the output cadence equals the IMU rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import measurements as meas
from .adaptive import AdaptiveEstimator
from .config import ConfigError, PipelineConfig
from .core import (
    ENC_YAW_BIAS,
    QUAT,
    STATE_DIM,
    FilterState,
    ProcessNoiseConfig,
    quat_conjugate,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_euler,
    yaw_variance,
)
from .events import (
    EncoderSample,
    FixType,
    GpsFixSample,
    GpsVelocitySample,
    ImuSample,
    RadarVelocitySample,
    SensorEvent,
    VslamPoseSample,
)
from .geodesy import EnuOrigin, GeodeticCoord
from .retrodiction import Snapshot, StateSnapshotRing
from .ukf import UkfParams, update as ukf_update, predict as ukf_predict
from .process import PropagationStep

_BIAS_INDICES = tuple(range(16, STATE_DIM))
_MAX_STEP_DT = 0.5

CHECKPOINT_VERSION = 1


def zupt_trigger(last_encoder_speed: Optional[float],
                 last_imu_rate: Optional[float],
                 speed_threshold: float = 0.05,
                 rate_threshold: float = 0.05) -> bool:
    """Stationarity condition: both encoder speed and IMU rate below their
    thresholds.  Without encoder data the trigger never fires."""
    if last_encoder_speed is None or last_imu_rate is None:
        return False
    return (last_encoder_speed < speed_threshold
            and last_imu_rate < rate_threshold)


@dataclass
class CoastState:
    active: bool = False
    last_accept: Optional[float] = None
    relax_armed: bool = False


@dataclass
class VslamAnchor:
    """Map-to-odom offset applied to raw VSLAM poses, plus the consecutive
    gate-rejection counter driving re-anchoring."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0])
    )
    rejections: int = 0

    def apply(self, p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (quat_rotate(self.quaternion, p) + self.position,
                quat_mul(self.quaternion, q))

    def reanchor(self, filter_p: np.ndarray, filter_q: np.ndarray,
                 raw_p: np.ndarray, raw_q: np.ndarray) -> None:
        self.quaternion = quat_mul(filter_q, quat_conjugate(raw_q))
        self.position = filter_p - quat_rotate(self.quaternion, raw_p)
        self.rejections = 0


@dataclass
class UpdateRecord:
    path: str
    accepted: bool
    d2: float
    dim: int
    threshold: float
    reason: str = "accepted"


@dataclass
class StepReport:
    stamp: float
    kind: str
    state: FilterState
    cov_diag: np.ndarray
    updates: list[UpdateRecord] = field(default_factory=list)
    coast: bool = False
    zupt: bool = False
    origin_set: bool = False
    dropped: Optional[str] = None


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be restored (stale config hash,
    version mismatch, malformed document)."""


class FusionPipeline:
    """Owns the filter state and routes sensor events through it."""

    def __init__(self, config: Optional[PipelineConfig] = None):
        self.config = config or PipelineConfig()
        self._params = UkfParams(
            alpha=self.config["ukf.alpha"],
            beta=self.config["ukf.beta"],
            kappa=self.config["ukf.kappa"],
        )
        self._epsilon = self.config["ukf.epsilon_pd"]
        self._build_models()
        self.reset()

    # ------------------------------------------------------------------
    # construction / lifecycle

    def _build_models(self) -> None:
        cfg = self.config
        gates = meas.GateThresholds(
            gps_pos=cfg["gates.gps_pos"],
            vslam=cfg["gates.vslam"],
            heading=cfg["gates.heading"],
            encoder=cfg["gates.encoder"],
            imu=cfg["gates.imu"],
            zupt=cfg["gates.zupt"],
        )
        self.gates = gates
        self._imu_raw = {
            1: meas.imu_raw_model(cfg["imu.sigma_gyro"],
                                  cfg["imu.sigma_accel"], gates.imu),
            2: meas.imu_raw_model(cfg["imu2.sigma_gyro"],
                                  cfg["imu2.sigma_accel"], gates.imu),
        }
        self._imu_orient = {
            1: meas.imu_orientation_model(cfg["imu.has_magnetometer"],
                                          cfg["imu.sigma_orient"], gates.imu),
            2: meas.imu_orientation_model(cfg["imu2.has_magnetometer"],
                                          cfg["imu2.sigma_orient"], gates.imu),
        }
        self._encoder_model = meas.encoder_model(
            cfg["encoder.sigma_vx"], cfg["encoder.sigma_vy"],
            cfg["encoder.sigma_wz"], gates.encoder,
            b_ewz_enabled=cfg["features.b_ewz"],
        )
        self._vz_model = meas.encoder_vz_model(cfg["encoder.vz_sigma"],
                                               gates.encoder)
        self._az_model = meas.encoder_az_model(cfg["encoder.az_sigma"],
                                               gates.encoder)
        self._gps_vel_model = meas.gps_velocity_model(
            cfg["gnss.velocity_sigma"], gates.gps_pos)
        self._radar_model = meas.radar_velocity_model(cfg["radar.sigma"],
                                                      gates.encoder)
        self._zupt_model = meas.zupt_model(cfg["zupt.sigma"], gates.zupt)
        self._lever = meas.LeverArm(
            offset=np.array([cfg["lever.arm_x"], cfg["lever.arm_y"],
                             cfg["lever.arm_z"]]),
            yaw_var_threshold=cfg["lever.yaw_var_threshold"],
            hold_s=cfg["lever.hold_s"],
        )

        base_noise = ProcessNoiseConfig(
            q_position=cfg["ukf.q_position"],
            q_orientation=cfg["ukf.q_orientation"],
            q_velocity=cfg["ukf.q_velocity"],
            q_omega=cfg["ukf.q_omega"],
            q_accel=cfg["ukf.q_accel"],
            q_gyro_bias=cfg["ukf.q_gyro_bias"],
            q_accel_bias=cfg["ukf.q_accel_bias"],
            q_ewz=cfg["ukf.q_ewz"],
            coast_position_inflation=cfg["coast.position_inflation"],
        )
        if not cfg["features.bias_states"]:
            base_noise = ProcessNoiseConfig(
                **{**base_noise.__dict__, "q_gyro_bias": 0.0,
                   "q_accel_bias": 0.0, "q_ewz": 0.0})
        elif not cfg["features.b_ewz"]:
            base_noise = ProcessNoiseConfig(
                **{**base_noise.__dict__, "q_ewz": 0.0})
        self._noise = base_noise
        # coasting freezes the encoder yaw-rate bias random walk
        self._coast_noise = ProcessNoiseConfig(
            **{**base_noise.__dict__, "q_ewz": 0.0})

    def _build_adaptive(self) -> dict[str, AdaptiveEstimator]:
        cfg = self.config
        window = cfg["adaptive.window"]
        alpha = cfg["adaptive.alpha"]

        def floor_for(sigmas, key):
            configured = cfg[key]
            return None if configured <= 0 else [configured**2] * len(sigmas) \
                if not isinstance(configured, list) else configured

        est: dict[str, AdaptiveEstimator] = {}
        gnss_r0 = np.diag([cfg["gnss.sigma_xy"] ** 2,
                           cfg["gnss.sigma_xy"] ** 2,
                           cfg["gnss.sigma_z"] ** 2])
        gnss_floor = None
        if cfg["adaptive.gnss_floor_xy"] > 0:
            fz = cfg["adaptive.gnss_floor_z"] or cfg["adaptive.gnss_floor_xy"]
            gnss_floor = [cfg["adaptive.gnss_floor_xy"] ** 2,
                          cfg["adaptive.gnss_floor_xy"] ** 2,
                          fz ** 2]
        est["gps_pos"] = AdaptiveEstimator(
            "gps_pos", gnss_r0, gnss_floor, window, alpha,
            enabled=cfg["adaptive.gnss"])
        enc_r0 = np.diag([cfg["encoder.sigma_vx"] ** 2,
                          cfg["encoder.sigma_vy"] ** 2,
                          cfg["encoder.sigma_wz"] ** 2])
        enc_floor = None
        if cfg["adaptive.encoder_floor"] > 0:
            enc_floor = [cfg["adaptive.encoder_floor"] ** 2] * 3
        est["encoder"] = AdaptiveEstimator(
            "encoder", enc_r0, enc_floor, window, alpha,
            enabled=cfg["adaptive.encoder"])
        est["encoder_vz"] = AdaptiveEstimator(
            "encoder_vz", np.array([[cfg["encoder.vz_sigma"] ** 2]]),
            None, window, alpha, enabled=cfg["adaptive.vz"])
        est["encoder_az"] = AdaptiveEstimator(
            "encoder_az", np.array([[cfg["encoder.az_sigma"] ** 2]]),
            None, window, alpha, enabled=cfg["adaptive.az"])
        return est

    def reset(self) -> None:
        """Restore the configured initial state and clear all session
        memory: origin, adaptive windows, snapshot ring, anchors."""
        cfg = self.config
        self.state = FilterState()
        diag = np.empty(STATE_DIM)
        diag[0:3] = cfg["init.position_var"]
        diag[3:7] = cfg["init.orientation_var"]
        diag[7:10] = cfg["init.velocity_var"]
        diag[10:13] = cfg["init.omega_var"]
        diag[13:16] = cfg["init.accel_var"]
        diag[16:19] = cfg["init.gyro_bias_var"]
        diag[19:22] = cfg["init.accel_bias_var"]
        diag[22] = cfg["init.ewz_var"]
        self.cov = np.diag(diag)
        self.origin: Optional[EnuOrigin] = None
        self.ring = StateSnapshotRing(cfg["retro.capacity"])
        self.adaptive = self._build_adaptive()
        self.vslam_anchor = VslamAnchor()
        self._last_raw_vslam: Optional[tuple[np.ndarray, np.ndarray]] = None
        self.coast = CoastState()
        self._started = False
        self._zupt_active = False
        self._last_encoder_speed: Optional[float] = None
        self._last_imu_rate: Optional[float] = None
        self._heading_anchor: Optional[tuple[np.ndarray, float, float]] = None
        self._lever_ok_since: Optional[float] = None
        self._lever_validated = False
        self.diagnostics: dict[str, int] = {}

    # ------------------------------------------------------------------
    # helpers

    def _count(self, key: str, n: int = 1) -> None:
        self.diagnostics[key] = self.diagnostics.get(key, 0) + n

    def _frozen_indices(self, coast_active: bool) -> Optional[list[int]]:
        if not self.config["features.bias_states"]:
            return list(_BIAS_INDICES)
        if not self.config["features.b_ewz"]:
            return [ENC_YAW_BIAS]
        if coast_active:
            # coasting freezes the encoder yaw-rate bias estimate; it is
            # consumed as a correction, not re-estimated, until GPS returns
            return [ENC_YAW_BIAS]
        return None

    def _apply_update(self, state: FilterState, cov: np.ndarray,
                      z: np.ndarray, model, records: list[UpdateRecord],
                      gate_scale: float = 1.0,
                      coast_active: bool = False):
        self._count("engine_update_calls")
        outcome = ukf_update(state, cov, z, model, self._params,
                             gate_scale=gate_scale,
                             frozen=self._frozen_indices(coast_active),
                             epsilon=self._epsilon)
        records.append(UpdateRecord(model.name, outcome.accepted, outcome.d2,
                                    model.dim, model.gate * gate_scale,
                                    outcome.reason))
        return outcome

    def _report(self, stamp: float, kind: str,
                updates: Optional[list[UpdateRecord]] = None,
                origin_set: bool = False,
                dropped: Optional[str] = None) -> StepReport:
        return StepReport(
            stamp=stamp,
            kind=kind,
            state=self.state.copy(),
            cov_diag=np.diag(self.cov).copy(),
            updates=updates or [],
            coast=self.coast.active,
            zupt=self._zupt_active,
            origin_set=origin_set,
            dropped=dropped,
        )

    def _update_coast(self, now: float) -> None:
        cfg = self.config
        if self.coast.last_accept is None:
            self.coast.last_accept = now
        was_active = self.coast.active
        self.coast.active = (now - self.coast.last_accept) > cfg["coast.enter_s"]
        if self.coast.active and not was_active:
            self.coast.relax_armed = True
            self._count("coast_entries")

    def _update_zupt(self) -> None:
        cfg = self.config
        if not cfg["zupt.enabled"]:
            self._zupt_active = False
            return
        speed, rate = self._last_encoder_speed, self._last_imu_rate
        if speed is None or rate is None:
            self._zupt_active = False
            return
        hyst = cfg["zupt.hysteresis"]
        thr_s, thr_r = cfg["zupt.speed_threshold"], cfg["zupt.rate_threshold"]
        if self._zupt_active:
            if speed > hyst * thr_s or rate > hyst * thr_r:
                self._zupt_active = False
        else:
            self._zupt_active = zupt_trigger(speed, rate, thr_s, thr_r)

    def _update_lever(self, now: float) -> None:
        if not np.any(self._lever.offset):
            return
        var = yaw_variance(self.state.quaternion, self.cov[QUAT, QUAT])
        if var < self._lever.yaw_var_threshold:
            if self._lever_ok_since is None:
                self._lever_ok_since = now
            elif now - self._lever_ok_since >= self._lever.hold_s:
                self._lever_validated = True
        else:
            self._lever_ok_since = None

    # ------------------------------------------------------------------
    # ingestion

    def ingest(self, event: SensorEvent) -> StepReport:
        if isinstance(event, ImuSample):
            if event.source == 1:
                return self._handle_imu(event)
            return self._handle_imu2(event)
        if isinstance(event, EncoderSample):
            return self._handle_encoder(event)
        if isinstance(event, GpsFixSample):
            return self._handle_gps_fix(event)
        if isinstance(event, GpsVelocitySample):
            return self._handle_gps_velocity(event)
        if isinstance(event, RadarVelocitySample):
            return self._handle_radar(event)
        if isinstance(event, VslamPoseSample):
            return self._handle_vslam(event)
        raise TypeError(f"unknown event type {type(event)!r}")

    @staticmethod
    def _finite(*arrays) -> bool:
        return all(a is None or np.all(np.isfinite(np.asarray(a, dtype=float)))
                   for a in arrays)

    def _imu_step_core(
        self,
        state: FilterState,
        cov: np.ndarray,
        sample: ImuSample,
        coast_active: bool,
        zupt_active: bool,
        records: list[UpdateRecord],
    ) -> tuple[FilterState, np.ndarray]:
        """Predict to the sample stamp and run the IMU updates.  Shared by
        live ingestion and ring replay so both paths are bit-identical."""
        dt_total = sample.stamp - state.stamp
        noise = self._coast_noise if coast_active else self._noise
        while dt_total > 1e-12:
            dt = min(dt_total, _MAX_STEP_DT)
            step = PropagationStep(dt, noise, coast_active)
            state, cov = ukf_predict(state, cov, step, self._params,
                                     epsilon=self._epsilon)
            dt_total -= dt
        z_raw = np.concatenate([sample.gyro, sample.accel])
        outcome = self._apply_update(state, cov, z_raw,
                                     self._imu_raw[sample.source], records,
                                     coast_active=coast_active)
        state, cov = outcome.state, outcome.cov
        if (sample.orientation is not None
                and self.config["imu.use_orientation"]):
            model = self._imu_orient[sample.source]
            rpy = quat_to_euler(quat_normalize(sample.orientation))
            z = np.asarray(rpy[: model.dim])
            outcome = self._apply_update(state, cov, z, model, records,
                                         coast_active=coast_active)
            state, cov = outcome.state, outcome.cov
        if zupt_active:
            outcome = self._apply_update(state, cov, np.zeros(3),
                                         self._zupt_model, records,
                                         coast_active=coast_active)
            state, cov = outcome.state, outcome.cov
        return state, cov

    def _handle_imu(self, sample: ImuSample) -> StepReport:
        if not self._finite(sample.gyro, sample.accel, sample.orientation):
            self._count("dropped_nonfinite")
            return self._report(sample.stamp, "imu", dropped="non-finite imu")
        if not self._started:
            self.state = FilterState.from_vector(self.state.as_vector(),
                                                 stamp=sample.stamp)
            self._started = True
        elif sample.stamp <= self.state.stamp:
            self._count("dropped_imu_out_of_order")
            return self._report(sample.stamp, "imu",
                                dropped="imu stamp not increasing")
        self._update_coast(sample.stamp)
        self._last_imu_rate = float(np.linalg.norm(sample.gyro))
        self._update_zupt()
        records: list[UpdateRecord] = []
        self.state, self.cov = self._imu_step_core(
            self.state, self.cov, sample, self.coast.active,
            self._zupt_active, records)
        self.state.validate()
        self.ring.record(Snapshot(sample.stamp, self.state.copy(),
                                  self.cov.copy(), sample,
                                  self._zupt_active, self.coast.active))
        self._update_lever(sample.stamp)
        return self._report(sample.stamp, "imu", records)

    def _replay_imu_step(self, state: FilterState, cov: np.ndarray,
                         snapshot: Snapshot) -> tuple[FilterState, np.ndarray]:
        records: list[UpdateRecord] = []
        return self._imu_step_core(state, cov, snapshot.imu_sample,
                                   snapshot.coast_active,
                                   snapshot.zupt_active, records)

    def _handle_imu2(self, sample: ImuSample) -> StepReport:
        if not self.config["imu2.enabled"]:
            self._count("dropped_imu2_disabled")
            return self._report(sample.stamp, "imu2", dropped="imu2 disabled")
        if not self._finite(sample.gyro, sample.accel, sample.orientation):
            self._count("dropped_nonfinite")
            return self._report(sample.stamp, "imu2", dropped="non-finite imu2")
        if not self._started:
            self._count("dropped_before_clock")
            return self._report(sample.stamp, "imu2", dropped="no imu clock yet")
        records: list[UpdateRecord] = []
        z = np.concatenate([sample.gyro, sample.accel])
        outcome = self._apply_update(self.state, self.cov, z,
                                     self._imu_raw[2], records,
                                     coast_active=self.coast.active)
        self.state, self.cov = outcome.state, outcome.cov
        if sample.orientation is not None and self.config["imu2.use_orientation"]:
            model = self._imu_orient[2]
            rpy = quat_to_euler(quat_normalize(sample.orientation))
            outcome = self._apply_update(self.state, self.cov,
                                         np.asarray(rpy[: model.dim]),
                                         model, records,
                                         coast_active=self.coast.active)
            self.state, self.cov = outcome.state, outcome.cov
        return self._report(sample.stamp, "imu2", records)

    def _handle_encoder(self, sample: EncoderSample) -> StepReport:
        if not self.config["encoder.enabled"]:
            self._count("dropped_encoder_disabled")
            return self._report(sample.stamp, "encoder",
                                dropped="encoder disabled")
        if not self._finite(sample.velocity, [sample.yaw_rate]):
            self._count("dropped_nonfinite")
            return self._report(sample.stamp, "encoder",
                                dropped="non-finite encoder")
        if not self._started:
            self._count("dropped_before_clock")
            return self._report(sample.stamp, "encoder",
                                dropped="no imu clock yet")
        self._last_encoder_speed = abs(float(sample.velocity[0]))
        records: list[UpdateRecord] = []
        model = self._encoder_model
        r = self.adaptive["encoder"].r.copy()
        if self.coast.active:
            # coasting leans on the bias-corrected encoder yaw rate for
            # heading, so its noise is tightened by the configured factor
            r[2, 2] *= self.config["coast.encoder_wz_factor"]
        model.r = r
        z = np.array([sample.velocity[0], sample.velocity[1],
                      sample.yaw_rate])
        outcome = self._apply_update(self.state, self.cov, z, model, records,
                                     coast_active=self.coast.active)
        self.state, self.cov = outcome.state, outcome.cov
        if outcome.accepted:
            self.adaptive["encoder"].observe(outcome.innovation)
        for name, m, est in (("encoder_vz", self._vz_model, "encoder_vz"),
                             ("encoder_az", self._az_model, "encoder_az")):
            m.r = self.adaptive[est].r.copy()
            outcome = self._apply_update(self.state, self.cov, np.zeros(1), m,
                                         records,
                                         coast_active=self.coast.active)
            self.state, self.cov = outcome.state, outcome.cov
            if outcome.accepted:
                self.adaptive[est].observe(outcome.innovation)
        self._update_zupt()
        return self._report(sample.stamp, "encoder", records)

    # -- GPS ------------------------------------------------------------

    def _route_delayed(self, stamp: float, bundle):
        """Apply a measurement bundle at its epoch: directly when it is not
        older than the newest snapshot (or replay is disabled), otherwise
        rewind and replay."""
        use_ring = (self.config["retro.enabled"] and len(self.ring) > 0
                    and self.ring.last_stamp is not None
                    and stamp < self.ring.last_stamp)
        if not use_ring:
            if self.config["retro.enabled"] and len(self.ring) == 0:
                self._count("retro_empty_buffer")
            state, cov, result = bundle(self.state, self.cov)
            self.state, self.cov = state, cov
            return result, 0, "applied"
        outcome = self.ring.apply_delayed(stamp, bundle,
                                          self._replay_imu_step)
        if outcome.status == "dropped_old":
            self._count("retro_dropped_too_old")
            return None, 0, "dropped_old"
        self.state, self.cov = outcome.state, outcome.cov
        self._count("retro_replays")
        return outcome.result, outcome.steps_replayed, "applied"

    def _handle_gps_fix(self, sample: GpsFixSample) -> StepReport:
        cfg = self.config
        if not cfg["gnss.enabled"]:
            self._count("dropped_gnss_disabled")
            return self._report(sample.stamp, "gps", dropped="gnss disabled")
        if not self._finite([sample.lat, sample.lon, sample.alt]):
            self._count("dropped_nonfinite")
            return self._report(sample.stamp, "gps", dropped="non-finite gps")
        screened = meas.screen_gps_fix(
            sample, FixType(cfg["gnss.min_fix_type"]), cfg["gnss.max_hdop"],
            cfg["gnss.min_satellites"])
        if screened is not None:
            self._count("gps_quality_rejected")
            return self._report(sample.stamp, "gps", dropped=screened.reason)
        if self.origin is None:
            self.origin = EnuOrigin.from_geodetic(
                GeodeticCoord(sample.lat, sample.lon, sample.alt))
            self._count("origin_set")
            return self._report(sample.stamp, "gps", origin_set=True)
        if not self._started:
            self._count("dropped_before_clock")
            return self._report(sample.stamp, "gps", dropped="no imu clock yet")

        built = meas.gps_fix_to_measurement(
            sample, self.origin, cfg["gnss.sigma_xy"], cfg["gnss.sigma_z"],
            FixType(cfg["gnss.min_fix_type"]), cfg["gnss.max_hdop"],
            cfg["gnss.min_satellites"],
            use_gps_fix_fields=cfg["gnss.use_gps_fix"])
        assert not isinstance(built, meas.QualityRejected)
        z, r_fix = built
        # innovation-adapted noise applies on the HDOP/VDOP path; explicit
        # per-fix covariance sources take precedence when the receiver
        # supplies them
        if (cfg["adaptive.gnss"] and sample.covariance is None
                and (not cfg["gnss.use_gps_fix"] or sample.err_horz is None)):
            base = self.adaptive["gps_pos"].r
            scale = np.diag([sample.hdop, sample.hdop, sample.vdop])
            r_used = scale @ base @ scale
        else:
            r_used = r_fix

        records: list[UpdateRecord] = []
        # velocity-consistency screen upstream of the chi-squared gate
        if cfg["pregate.enabled"] and self.coast.last_accept is not None:
            dt_raw = sample.stamp - self.coast.last_accept
            dt_eff = min(dt_raw, cfg["pregate.max_dt"])
            idx = self.ring.nearest_at_or_before(sample.stamp)
            ref_state = (self.ring.entries[idx].state if idx is not None
                         else self.state)
            ok, implied = meas.implied_speed_precheck(
                z, ref_state.position, dt_eff, cfg["pregate.max_speed"])
            if not ok:
                self._count("pregate_rejected")
                records.append(UpdateRecord("gps_pos", False, float("nan"), 3,
                                            self.gates.gps_pos, "pregate"))
                return self._report(sample.stamp, "gps", records)

        gate_scale = 1.0
        if self.coast.active and self.coast.relax_armed:
            gate_scale = cfg["coast.gate_relax"]
            self.coast.relax_armed = False

        lever = self._lever.offset if self._lever_validated else None
        model = meas.gps_position_model(r_used, self.gates.gps_pos, lever)
        heading_plan = self._plan_heading(z, r_used, sample.stamp)

        def bundle(state: FilterState, cov: np.ndarray):
            out = self._apply_update(state, cov, z, model, records,
                                     gate_scale=gate_scale,
                                     coast_active=self.coast.active)
            state, cov = out.state, out.cov
            pos_outcome = out
            if out.accepted and heading_plan is not None:
                yaw_z, yaw_var_z = heading_plan
                hmodel = meas.gps_heading_model(yaw_var_z, self.gates.heading)
                hout = self._apply_update(state, cov, np.array([yaw_z]),
                                          hmodel, records,
                                          coast_active=self.coast.active)
                state, cov = hout.state, hout.cov
            return state, cov, pos_outcome

        result, _, status = self._route_delayed(sample.stamp, bundle)
        if status == "dropped_old":
            return self._report(sample.stamp, "gps",
                                dropped="older than replay buffer")
        if result is not None and result.accepted:
            self.coast.last_accept = max(self.coast.last_accept or 0.0,
                                         sample.stamp)
            self.coast.active = False
            self._heading_anchor = (z[:2].copy(), sample.stamp,
                                    float(r_used[0, 0] + r_used[1, 1]))
            self.adaptive["gps_pos"].observe(result.innovation)
        return self._report(sample.stamp, "gps", records)

    def _plan_heading(self, z: np.ndarray, r: np.ndarray,
                      stamp: float) -> Optional[tuple[float, float]]:
        cfg = self.config
        if not cfg["gnss.heading_enabled"] or self._heading_anchor is None:
            return None
        prev_xy, prev_stamp, prev_var = self._heading_anchor
        horizontal_var = prev_var + float(r[0, 0] + r[1, 1])
        return meas.derive_gps_heading(
            prev_xy, prev_stamp, z[:2], stamp,
            horizontal_var / 2.0,
            min_baseline=cfg["gnss.heading_min_baseline"],
            min_speed=cfg["gnss.heading_min_speed"],
            sigma_floor=cfg["gnss.heading_sigma_floor"],
        )

    def _handle_gps_velocity(self, sample: GpsVelocitySample) -> StepReport:
        cfg = self.config
        if not cfg["gnss.velocity_enabled"]:
            self._count("dropped_gps_vel_disabled")
            return self._report(sample.stamp, "gps_vel",
                                dropped="gps velocity disabled")
        if not self._finite(sample.velocity_en):
            self._count("dropped_nonfinite")
            return self._report(sample.stamp, "gps_vel",
                                dropped="non-finite gps velocity")
        if not self._started:
            self._count("dropped_before_clock")
            return self._report(sample.stamp, "gps_vel",
                                dropped="no imu clock yet")
        records: list[UpdateRecord] = []

        def bundle(state: FilterState, cov: np.ndarray):
            out = self._apply_update(state, cov, sample.velocity_en,
                                     self._gps_vel_model, records,
                                     coast_active=self.coast.active)
            return out.state, out.cov, out

        result, _, status = self._route_delayed(sample.stamp, bundle)
        if status == "dropped_old":
            return self._report(sample.stamp, "gps_vel",
                                dropped="older than replay buffer")
        return self._report(sample.stamp, "gps_vel", records)

    def _handle_radar(self, sample: RadarVelocitySample) -> StepReport:
        if not self.config["radar.enabled"]:
            self._count("dropped_radar_disabled")
            return self._report(sample.stamp, "radar",
                                dropped="radar disabled")
        if not self._finite(sample.velocity_body):
            self._count("dropped_nonfinite")
            return self._report(sample.stamp, "radar",
                                dropped="non-finite radar")
        if not self._started:
            self._count("dropped_before_clock")
            return self._report(sample.stamp, "radar",
                                dropped="no imu clock yet")
        records: list[UpdateRecord] = []
        outcome = self._apply_update(self.state, self.cov,
                                     sample.velocity_body,
                                     self._radar_model, records,
                                     coast_active=self.coast.active)
        self.state, self.cov = outcome.state, outcome.cov
        return self._report(sample.stamp, "radar", records)

    def _handle_vslam(self, sample: VslamPoseSample) -> StepReport:
        cfg = self.config
        if not cfg["vslam.enabled"]:
            self._count("dropped_vslam_disabled")
            return self._report(sample.stamp, "vslam",
                                dropped="vslam disabled")
        if not self._finite(sample.position, sample.quaternion,
                            sample.cov_diag):
            self._count("dropped_nonfinite")
            return self._report(sample.stamp, "vslam",
                                dropped="non-finite vslam")
        if not self._started:
            self._count("dropped_before_clock")
            return self._report(sample.stamp, "vslam",
                                dropped="no imu clock yet")
        pitch = quat_to_euler(self.state.quaternion)[1]
        limit = np.radians(90.0 - cfg["vslam.singularity_deg"])
        if abs(pitch) > limit:
            self._count("vslam_skipped_singularity")
            return self._report(sample.stamp, "vslam",
                                dropped="pitch near singularity")
        raw_q = quat_normalize(sample.quaternion)
        self._last_raw_vslam = (sample.position.copy(), raw_q.copy())
        p_c, q_c = self.vslam_anchor.apply(sample.position, raw_q)
        rpy = quat_to_euler(q_c)
        z = np.concatenate([p_c, rpy])
        if sample.cov_diag is not None:
            r = np.diag(np.asarray(sample.cov_diag, dtype=float))
        else:
            r = np.diag([cfg["vslam.sigma_pos"] ** 2] * 3
                        + [cfg["vslam.sigma_orient"] ** 2] * 3)
        model = meas.vslam_model(r, self.gates.vslam,
                                 cfg["vslam.pos_floor"],
                                 cfg["vslam.orient_floor"])
        records: list[UpdateRecord] = []

        def bundle(state: FilterState, cov: np.ndarray):
            out = self._apply_update(state, cov, z, model, records,
                                     coast_active=self.coast.active)
            return out.state, out.cov, out

        result, _, status = self._route_delayed(sample.stamp, bundle)
        if status == "dropped_old":
            return self._report(sample.stamp, "vslam",
                                dropped="older than replay buffer")
        if result is not None:
            self._vslam_reinit_check(result.accepted)
        return self._report(sample.stamp, "vslam", records)

    def _vslam_reinit_check(self, accepted: bool) -> None:
        if accepted:
            self.vslam_anchor.rejections = 0
            return
        self.vslam_anchor.rejections += 1
        if self.vslam_anchor.rejections >= self.config["vslam.reinit_n"]:
            if self._last_raw_vslam is not None:
                raw_p, raw_q = self._last_raw_vslam
                self.vslam_anchor.reanchor(self.state.position,
                                           self.state.quaternion,
                                           raw_p, raw_q)
                self._count("vslam_reanchors")

    # ------------------------------------------------------------------
    # persistence

    def save_checkpoint(self, path: str) -> None:
        doc = {
            "version": CHECKPOINT_VERSION,
            "config_hash": self.config.hash(),
            "started": self._started,
            "stamp": self.state.stamp,
            "state": self.state.as_vector().tolist(),
            "cov": self.cov.tolist(),
            "origin": None if self.origin is None else {
                "lat": self.origin.geodetic.lat,
                "lon": self.origin.geodetic.lon,
                "alt": self.origin.geodetic.alt,
            },
            "adaptive": {k: v.snapshot() for k, v in self.adaptive.items()},
            "vslam_anchor": {
                "position": self.vslam_anchor.position.tolist(),
                "quaternion": self.vslam_anchor.quaternion.tolist(),
                "rejections": self.vslam_anchor.rejections,
            },
            "coast": {
                "active": self.coast.active,
                "last_accept": self.coast.last_accept,
                "relax_armed": self.coast.relax_armed,
            },
            "zupt": {
                "active": self._zupt_active,
                "speed": self._last_encoder_speed,
                "rate": self._last_imu_rate,
            },
            "heading_anchor": None if self._heading_anchor is None else {
                "xy": self._heading_anchor[0].tolist(),
                "stamp": self._heading_anchor[1],
                "var": self._heading_anchor[2],
            },
            "lever": {
                "validated": self._lever_validated,
                "ok_since": self._lever_ok_since,
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)

    def load_checkpoint(self, path: str) -> None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError("checkpoint version mismatch")
        if doc.get("config_hash") != self.config.hash():
            raise CheckpointError("checkpoint was written with a different "
                                  "configuration")
        self.reset()
        self._started = doc["started"]
        self.state = FilterState.from_vector(np.asarray(doc["state"]),
                                             stamp=doc["stamp"],
                                             normalize=False)
        self.cov = np.asarray(doc["cov"], dtype=float)
        if doc["origin"] is not None:
            self.origin = EnuOrigin.from_geodetic(
                GeodeticCoord(doc["origin"]["lat"], doc["origin"]["lon"],
                              doc["origin"]["alt"]))
        for name, data in doc["adaptive"].items():
            if name in self.adaptive:
                self.adaptive[name].restore(data)
        anchor = doc["vslam_anchor"]
        self.vslam_anchor.position = np.asarray(anchor["position"])
        self.vslam_anchor.quaternion = np.asarray(anchor["quaternion"])
        self.vslam_anchor.rejections = int(anchor["rejections"])
        self.coast = CoastState(doc["coast"]["active"],
                                doc["coast"]["last_accept"],
                                doc["coast"]["relax_armed"])
        self._zupt_active = doc["zupt"]["active"]
        self._last_encoder_speed = doc["zupt"]["speed"]
        self._last_imu_rate = doc["zupt"]["rate"]
        if doc["heading_anchor"] is not None:
            ha = doc["heading_anchor"]
            self._heading_anchor = (np.asarray(ha["xy"]), ha["stamp"],
                                    ha["var"])
        self._lever_validated = doc["lever"]["validated"]
        self._lever_ok_since = doc["lever"]["ok_since"]
