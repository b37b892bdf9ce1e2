"""MUSE proprioceptive stack: attitude observer, leg odometry, KF fusion.

The attitude observer cascades a passive nonlinear complementary observer
(gravity + heading corrections with gyro-bias integral action) with a
6-state multiplicative Kalman filter linearized about the observer output;
the filter never feeds back into the observer, preserving its global
stability.  Leg odometry averages per-stance-leg base velocities; a 6-state
linear KF fuses gravity-compensated acceleration with the leg-odometry
velocity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import TrajectoryEstimator
from .datamodel import EstimateRecord, SensorFrame
from .liegroups import (
    cross3,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    quat_to_rot,
    skew,
)
from .synthgen import GRAVITY, NoiseSpec
from .validation import check_positive, check_psd, symmetrize

GRAVITY_NORM = float(np.linalg.norm(GRAVITY))


@dataclass
class AttitudeState:
    """Observer output: corrected quaternion, gyro bias, 6x6 covariance."""

    q: np.ndarray
    gyro_bias: np.ndarray
    P: np.ndarray


@dataclass
class FusionState:
    """Position/velocity KF state with its covariance and noise settings."""

    p: np.ndarray
    v: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R_meas: np.ndarray


@dataclass
class LegOdometryResult:
    v_body: np.ndarray
    stance_count: int

    @property
    def valid(self) -> bool:
        return self.stance_count >= 1


def leg_odometry(frame: SensorFrame, omega_corrected) -> LegOdometryResult:
    """Mean base velocity over stance legs: v_l = -(v_rel + w x fk)."""
    omega = np.asarray(omega_corrected, dtype=float)
    total = np.zeros(3)
    n = 0
    for foot_idx, foot in enumerate(("LF", "RF", "LH", "RH")):
        if not frame.contacts.flags[foot_idx]:
            continue
        kin = frame.foot_kinematics(foot)
        if kin is None:
            raise ValueError(f"stance foot {foot} has no kinematics")
        total += -(kin.v_rel + cross3(omega, kin.fk))
        n += 1
    if n == 0:
        return LegOdometryResult(v_body=np.zeros(3), stance_count=0)
    return LegOdometryResult(v_body=total / n, stance_count=n)


class AttitudeObserver:
    """Passive complementary observer plus exogenous 6-state MKF."""

    def __init__(self, k1: float, k2: float, kb: float, noise: NoiseSpec,
                 accel_gate: float = 0.5, mag_reference=(1.0, 0.0, 0.0)):
        self.k1 = k1
        self.k2 = k2
        self.kb = kb
        self.noise = noise
        self.accel_gate = accel_gate
        self.r_g = np.array([0.0, 0.0, 1.0])  # specific-force direction at rest
        self.r_m = np.asarray(mag_reference, dtype=float)
        self.r_m = self.r_m / np.linalg.norm(self.r_m)

    def reset(self, q0, P0_att: float, P0_bias: float) -> None:
        self.q_nlo = quat_normalize(q0)
        self.b_nlo = np.zeros(3)
        self.dx = np.zeros(6)  # (attitude error, bias error) wrt the NLO
        self.P = np.diag([P0_att] * 3 + [P0_bias] * 3).astype(float)

    def step(self, imu, dt: float, v_body_hint=None) -> AttitudeState:
        check_positive(dt, "dt")
        sg = self.noise
        R_nlo = quat_to_rot(self.q_nlo)

        # centripetal compensation: remove the rotation-induced part of the
        # specific force before using it as a gravity direction reference
        f = imu.accel
        if v_body_hint is not None:
            f = f - cross3(imu.gyro - self.b_nlo, v_body_hint)
        f_norm = np.linalg.norm(f)
        use_accel = abs(f_norm - GRAVITY_NORM) < self.accel_gate * GRAVITY_NORM \
            and f_norm > 1e-9
        f_unit = f / f_norm if f_norm > 1e-9 else self.r_g

        # surrogate heading: previous-estimate-rotated reference when no mag
        if imu.mag is not None and np.linalg.norm(imu.mag) > 1e-9:
            m_unit = imu.mag / np.linalg.norm(imu.mag)
        else:
            m_unit = R_nlo.T @ self.r_m

        g_pred = R_nlo.T @ self.r_g
        m_pred = R_nlo.T @ self.r_m
        sigma = self.k2 * cross3(m_unit, m_pred)
        if use_accel:
            sigma = sigma + self.k1 * cross3(f_unit, g_pred)

        # NLO: integrate corrected rate, integral action on the bias
        u_nlo = imu.gyro - self.b_nlo + sigma
        self.q_nlo = quat_normalize(
            quat_mul(self.q_nlo, quat_from_axis_angle(u_nlo * dt)))
        self.b_nlo = self.b_nlo - self.kb * sigma * dt

        # XKF predict: error state relative to the (known) NLO trajectory;
        # the observer's own correction and integral action enter as inputs
        F = np.eye(6)
        F[:3, :3] -= skew(u_nlo) * dt
        F[:3, 3:] = -np.eye(3) * dt
        self.dx = F @ self.dx
        self.dx[:3] -= sigma * dt
        self.dx[3:] += self.kb * sigma * dt
        var_g = sg.sigma_gyro**2 * dt + 1e-14
        var_b = sg.sigma_gyro_bias**2 * dt + 1e-16
        self.P = F @ self.P @ F.T
        self.P[0, 0] += var_g
        self.P[1, 1] += var_g
        self.P[2, 2] += var_g
        self.P[3, 3] += var_b
        self.P[4, 4] += var_b
        self.P[5, 5] += var_b

        # XKF update: vector-direction measurements about the NLO estimate.
        # Without a real magnetometer the surrogate heading is the prediction
        # itself, so its innovation vanishes and yaw stays gyro-driven.
        R_nlo = quat_to_rot(self.q_nlo)
        rows = []
        ys = []
        variances = []
        dir_var = (sg.sigma_accel / max(GRAVITY_NORM, 1e-9))**2 / dt + 1e-4
        if use_accel:
            pred = R_nlo.T @ self.r_g
            H = np.zeros((3, 6))
            H[:, :3] = skew(pred)
            rows.append(H)
            ys.append(f_unit - pred)
            variances.append(np.full(3, dir_var))
        pred_m = R_nlo.T @ self.r_m
        if imu.mag is not None and np.linalg.norm(imu.mag) > 1e-9:
            meas_m = imu.mag / np.linalg.norm(imu.mag)
        else:
            meas_m = pred_m
        H = np.zeros((3, 6))
        H[:, :3] = skew(pred_m)
        rows.append(H)
        ys.append(meas_m - pred_m)
        variances.append(np.full(3, max(sg.sigma_mag, 1e-3)**2 / dt))

        H = np.vstack(rows)
        y = np.concatenate(ys)
        Rm = np.diag(np.concatenate(variances))
        S = H @ self.P @ H.T + Rm
        K = self.P @ H.T @ np.linalg.solve(S, np.eye(S.shape[0]))
        self.dx = self.dx + K @ (y - H @ self.dx)
        IKH = np.eye(6) - K @ H
        self.P = symmetrize(IKH @ self.P @ IKH.T + K @ Rm @ K.T)
        return self.state()

    def state(self) -> AttitudeState:
        q = quat_normalize(quat_mul(self.q_nlo, quat_from_axis_angle(self.dx[:3])))
        return AttitudeState(q=q, gyro_bias=self.b_nlo + self.dx[3:], P=self.P.copy())


class VelocityFusion:
    """Constant-acceleration KF on world-frame (p, v).

    `process_accel_floor` keeps the input-noise model from collapsing when
    the configured accelerometer density is tiny; residual attitude error
    leaks into the acceleration input, so some floor is always physical.
    """

    def __init__(self, noise: NoiseSpec, r_meas_std: float = 0.01,
                 process_accel_floor: float = 0.02, gravity=GRAVITY):
        self.noise = noise
        self.r_meas_std = r_meas_std
        self.process_accel_floor = process_accel_floor
        self.gravity = np.asarray(gravity, dtype=float)

    def reset(self, p0, v0, P0_pos: float, P0_vel: float) -> None:
        self.p = np.asarray(p0, dtype=float).copy()
        self.v = np.asarray(v0, dtype=float).copy()
        self.P = np.diag([P0_pos] * 3 + [P0_vel] * 3).astype(float)
        self.R_meas = np.eye(3) * self.r_meas_std**2
        self._fq_cache = {}

    def _predict_mats(self, dt: float):
        mats = self._fq_cache.get(dt)
        if mats is None:
            F = np.eye(6)
            F[:3, 3:] = np.eye(3) * dt
            G = np.vstack([0.5 * dt * dt * np.eye(3), dt * np.eye(3)])
            var_a = self.noise.sigma_accel**2 / dt + self.process_accel_floor**2
            mats = (F, G @ G.T * var_a)
            if len(self._fq_cache) < 64:
                self._fq_cache[dt] = mats
        return mats

    def step(self, attitude: AttitudeState, imu, odo: LegOdometryResult,
             dt: float) -> FusionState:
        check_positive(dt, "dt")
        if np.diag(self.P).min() < 0.0:
            check_psd(self.P, "fusion covariance")
        R = quat_to_rot(attitude.q)
        u = R @ imu.accel + self.gravity

        self.p = self.p + self.v * dt + 0.5 * u * dt * dt
        self.v = self.v + u * dt
        F, Q = self._predict_mats(dt)
        self.P = F @ self.P @ F.T + Q

        if odo.valid:
            z = R @ odo.v_body
            H = np.zeros((3, 6))
            H[:, 3:] = np.eye(3)
            S = self.P[3:, 3:] + self.R_meas
            K = self.P @ H.T @ np.linalg.solve(S, np.eye(3))
            innov = z - self.v
            self.p = self.p + K[:3] @ innov
            self.v = self.v + K[3:] @ innov
            IKH = np.eye(6) - K @ H
            self.P = symmetrize(IKH @ self.P @ IKH.T + K @ self.R_meas @ K.T)
        return self.state(Q)

    def state(self, Q=None) -> FusionState:
        return FusionState(p=self.p.copy(), v=self.v.copy(), P=self.P.copy(),
                           Q=Q if Q is not None else np.zeros((6, 6)),
                           R_meas=self.R_meas.copy())


class MuseEstimator(TrajectoryEstimator):
    """Cascaded proprioceptive estimator: attitude -> leg odometry -> fusion.

    Parameters
    ----------
    k1, k2, kb : complementary-observer gains (gravity, heading, bias).
    noise : shared NoiseSpec used to derive filter covariances.
    r_meas_std : leg-odometry velocity measurement std [m/s].
    init_* : initial state; init_att_std/init_bias_std/init_pos_std/
        init_vel_std set the diagonal initial covariances.
    """

    def __init__(self, k1=1.0, k2=0.5, kb=0.1, noise=None, r_meas_std=0.01,
                 accel_gate=0.5, process_accel_floor=0.02,
                 centripetal_compensation=True,
                 init_position=(0.0, 0.0, 0.0),
                 init_velocity=(0.0, 0.0, 0.0),
                 init_quaternion=(0.0, 0.0, 0.0, 1.0),
                 init_att_std=0.1, init_bias_std=0.01,
                 init_pos_std=0.1, init_vel_std=0.1):
        self.k1 = k1
        self.k2 = k2
        self.kb = kb
        self.noise = noise
        self.r_meas_std = r_meas_std
        self.accel_gate = accel_gate
        self.process_accel_floor = process_accel_floor
        self.centripetal_compensation = centripetal_compensation
        self.init_position = init_position
        self.init_velocity = init_velocity
        self.init_quaternion = init_quaternion
        self.init_att_std = init_att_std
        self.init_bias_std = init_bias_std
        self.init_pos_std = init_pos_std
        self.init_vel_std = init_vel_std

    def reset(self, first_frame: SensorFrame | None = None) -> None:
        noise = self.noise or NoiseSpec()
        self.attitude_ = AttitudeObserver(self.k1, self.k2, self.kb, noise,
                                          self.accel_gate)
        self.attitude_.reset(self.init_quaternion, self.init_att_std**2,
                             self.init_bias_std**2)
        self.fusion_ = VelocityFusion(noise, self.r_meas_std,
                                      self.process_accel_floor)
        self.fusion_.reset(self.init_position, self.init_velocity,
                           self.init_pos_std**2, self.init_vel_std**2)
        self.t_prev_ = None
        self.v_body_hint_ = None

    def step(self, frame: SensorFrame) -> EstimateRecord:
        if self.t_prev_ is None:
            dt = None
        else:
            dt = frame.t - self.t_prev_
            if dt <= 0.0:
                raise ValueError(f"non-positive dt {dt}")
        self.t_prev_ = frame.t

        if dt is not None:
            hint = self.v_body_hint_ if self.centripetal_compensation else None
            att = self.attitude_.step(frame.imu, dt, hint)
            omega_corr = frame.imu.gyro - att.gyro_bias
            odo = leg_odometry(frame, omega_corr)
            if odo.valid:
                self.v_body_hint_ = odo.v_body
            self.fusion_.step(att, frame.imu, odo, dt)
        else:
            att = self.attitude_.state()
            odo = leg_odometry(frame, frame.imu.gyro)
            if odo.valid:
                self.v_body_hint_ = odo.v_body
        return EstimateRecord(t=frame.t, p=self.fusion_.p.copy(), q=att.q,
                              v=self.fusion_.v.copy())
