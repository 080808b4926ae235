"""Discrete-time propagation of the filter state and process-noise assembly.

One step advances position by the rotated body velocity, composes the
quaternion with the exact rate increment, and integrates body acceleration
into body velocity.  Rates, accelerations, and all biases are held constant;
their random walks enter only through the process noise matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ACC,
    ACCEL_BIAS,
    ENC_YAW_BIAS,
    GYRO_BIAS,
    OMEGA,
    POS,
    QUAT,
    STATE_DIM,
    VEL,
    FilterState,
    NumericalError,
    ProcessNoiseConfig,
    quat_exp,
    quat_mul,
    quat_rotate,
)

_STATE_BLOCK_NAMES = (
    ("position", POS),
    ("quaternion", QUAT),
    ("velocity", VEL),
)


@dataclass(frozen=True)
class PropagationStep:
    """One prediction step: dt must lie in (0, 0.5]; larger gaps are split
    upstream and non-positive steps rejected there."""

    dt: float
    noise: ProcessNoiseConfig
    coast_active: bool = False

    def __post_init__(self):
        if not (0.0 < self.dt <= 0.5):
            raise ValueError(f"dt={self.dt} outside (0, 0.5]")


def propagate_states(states: np.ndarray, dt: float) -> np.ndarray:
    """Vectorized kinematic step over rows of flat 23-vectors."""
    x = np.atleast_2d(np.asarray(states, dtype=float))
    out = x.copy()
    q = x[:, QUAT]
    out[:, POS] = x[:, POS] + dt * quat_rotate(q, x[:, VEL])
    out[:, QUAT] = quat_mul(q, quat_exp(x[:, OMEGA], dt))
    out[:, VEL] = x[:, VEL] + dt * x[:, ACC]
    if np.asarray(states).ndim == 1:
        return out[0]
    return out


def propagate(state: FilterState, step: PropagationStep) -> FilterState:
    """Advance a state by one step; raises naming the offending component
    if the result is non-finite."""
    vec = propagate_states(state.as_vector(), step.dt)
    if not np.all(np.isfinite(vec)):
        for name, sl in _STATE_BLOCK_NAMES:
            if not np.all(np.isfinite(vec[sl])):
                raise NumericalError(f"propagation produced non-finite {name}")
        raise NumericalError("propagation produced non-finite state")
    return FilterState.from_vector(vec, stamp=state.stamp + step.dt)


def process_noise_matrix(step: PropagationStep) -> np.ndarray:
    """Block-diagonal Q scaled by dt; the position block is inflated while
    coasting."""
    n = step.noise
    diag = np.empty(STATE_DIM)
    q_pos = n.q_position
    if step.coast_active:
        q_pos = q_pos * n.coast_position_inflation
    diag[POS] = q_pos
    diag[QUAT] = n.q_orientation
    diag[VEL] = n.q_velocity
    diag[OMEGA] = n.q_omega
    diag[ACC] = n.q_accel
    diag[GYRO_BIAS] = n.q_gyro_bias
    diag[ACCEL_BIAS] = n.q_accel_bias
    diag[ENC_YAW_BIAS] = n.q_ewz
    return np.diag(diag * step.dt)
