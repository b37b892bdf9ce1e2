"""Shared estimator interface.

The three estimators are sequence-to-sequence transformers over sensor
frames: `transform(frames)` maps a synchronized stream to estimate records,
with per-iteration wall-clock time measured around the update step only.
They follow the scikit-learn estimator contract (`get_params`/`set_params`
via `BaseEstimator`, state reset between runs, trailing-underscore runtime
attributes).
"""

from __future__ import annotations

import time

from sklearn.base import BaseEstimator

from .datamodel import EstimateRecord, SensorFrame


class EstimatorStepError(RuntimeError):
    """A step failed; carries the frame index and timestamp for context."""

    def __init__(self, frame_index: int, timestamp: float, cause: Exception):
        super().__init__(f"frame {frame_index} (t={timestamp:.6f}): {cause}")
        self.frame_index = frame_index
        self.timestamp = timestamp
        self.cause = cause


class TrajectoryEstimator(BaseEstimator):
    """Base class: sequential state machine with a transformer facade."""

    def reset(self, first_frame: SensorFrame | None = None) -> None:
        raise NotImplementedError

    def step(self, frame: SensorFrame) -> EstimateRecord:
        raise NotImplementedError

    def fit(self, X=None, y=None):
        """No-op; estimator behavior is fully determined by its parameters."""
        return self

    def transform(self, frames) -> list[EstimateRecord]:
        """Run the estimator over a frame stream, timing each update."""
        self.reset(frames[0] if frames else None)
        records = []
        clock = time.perf_counter
        for i, frame in enumerate(frames):
            t0 = clock()
            try:
                rec = self.step(frame)
            except Exception as exc:  # attach stream position to the failure
                raise EstimatorStepError(i, frame.t, exc) from exc
            rec.iter_time = clock() - t0
            records.append(rec)
        return records
