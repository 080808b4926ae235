"""State snapshot ring and delayed-measurement replay.

The pipeline records a snapshot after every primary-IMU step.  When a
delayed measurement arrives, the ring restores the newest snapshot at or
before the measurement epoch, applies the measurement there, and re-runs
the recorded IMU steps forward, rewriting the stored states along the way.
Only IMU steps are replayed; lower-latency sensors are applied where they
arrived.  Measurements older than the buffered span are dropped (applying
them stale would reintroduce exactly the error replay exists to remove).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import FilterState


@dataclass
class Snapshot:
    stamp: float
    state: FilterState
    cov: np.ndarray
    imu_sample: object
    zupt_active: bool = False
    coast_active: bool = False


@dataclass
class ReplayOutcome:
    status: str  # "applied", "dropped_old", "empty"
    steps_replayed: int = 0
    state: Optional[FilterState] = None
    cov: Optional[np.ndarray] = None
    result: object = None


class StateSnapshotRing:
    """Fixed-capacity ring of per-IMU-step snapshots, stamps strictly
    increasing."""

    def __init__(self, capacity: int = 100):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: list[Snapshot] = []

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[Snapshot]:
        return self._entries

    @property
    def last_stamp(self) -> Optional[float]:
        return self._entries[-1].stamp if self._entries else None

    @property
    def first_stamp(self) -> Optional[float]:
        return self._entries[0].stamp if self._entries else None

    def clear(self) -> None:
        self._entries.clear()

    def record(self, snapshot: Snapshot) -> None:
        if self._entries and snapshot.stamp <= self._entries[-1].stamp:
            raise ValueError("snapshot stamps must be strictly increasing")
        self._entries.append(snapshot)
        if len(self._entries) > self.capacity:
            self._entries.pop(0)

    def update_last(self, state: FilterState, cov: np.ndarray,
                    **fields) -> None:
        """Amend the newest snapshot after further same-stamp updates."""
        last = self._entries[-1]
        last.state = state
        last.cov = cov
        for key, value in fields.items():
            setattr(last, key, value)

    def nearest_at_or_before(self, stamp: float) -> Optional[int]:
        stamps = [e.stamp for e in self._entries]
        idx = bisect.bisect_right(stamps, stamp) - 1
        return idx if idx >= 0 else None

    def apply_delayed(
        self,
        stamp: float,
        apply_fn: Callable[[FilterState, np.ndarray], tuple],
        replay_fn: Callable[[FilterState, np.ndarray, Snapshot], tuple],
    ) -> ReplayOutcome:
        """Rewind, apply, and replay one delayed measurement.

        ``apply_fn(state, cov) -> (state, cov, result)`` performs the
        measurement update at the restored epoch; ``replay_fn(state, cov,
        snapshot) -> (state, cov)`` re-runs one recorded IMU step.  The
        ring's stored states are replaced with the replayed ones so later
        delayed measurements rewind onto corrected history.
        """
        if not self._entries:
            return ReplayOutcome(status="empty")
        if stamp < self._entries[0].stamp:
            return ReplayOutcome(status="dropped_old")
        idx = self.nearest_at_or_before(stamp)
        base = self._entries[idx]
        state, cov, result = apply_fn(base.state, base.cov)
        self._entries[idx].state = state
        self._entries[idx].cov = cov
        steps = 0
        for entry in self._entries[idx + 1 :]:
            state, cov = replay_fn(state, cov, entry)
            entry.state = state
            entry.cov = cov
            steps += 1
        return ReplayOutcome(status="applied", steps_replayed=steps,
                             state=state, cov=cov, result=result)
