"""Proprioceptive state estimation benchmark for quadruped robots.

Three estimators over a shared IMU + leg-kinematics + contact data model:
a cascaded attitude/leg-odometry/KF stack (MUSE), a contact-aided
right-invariant EKF, and a fixed-lag invariant smoother; plus a synthetic
data generator, trajectory metrics, and a CLI pipeline.
"""

from .datamodel import (
    ContactState,
    EstimateRecord,
    FootKinematics,
    GroundTruthRecord,
    ImuSample,
    SensorFrame,
)
from .iekf import IekfEstimator
from .muse import MuseEstimator
from .smoother import SmootherEstimator
from .synthgen import GaitSpec, MotionProfile, NoiseSpec

__all__ = [
    "ContactState",
    "EstimateRecord",
    "FootKinematics",
    "GaitSpec",
    "GroundTruthRecord",
    "IekfEstimator",
    "ImuSample",
    "MotionProfile",
    "MuseEstimator",
    "NoiseSpec",
    "SensorFrame",
    "SmootherEstimator",
]

__version__ = "0.1.0"
