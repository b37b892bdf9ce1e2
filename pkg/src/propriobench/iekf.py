"""Contact-aided right-invariant EKF with IMU biases.

State: extended pose X = (R, v, p, d_1..d_k) plus additive gyro/accel
biases.  The right-invariant error (Exp(xi) = Xhat X^-1) evolves with a
state-independent group block; bias columns follow the imperfect-IEKF
convention (applied additively).  Kinematic position measurements enter in
the right-invariant form Y = X^-1 b + V, stacked over stance feet; contacts
are augmented on touch-down and marginalized out on lift-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .base import TrajectoryEstimator
from .datamodel import FOOT_ORDER, EstimateRecord, SensorFrame
from .liegroups import (
    ExtendedPose,
    adjoint,
    group_dim,
    group_exp,
    quat_to_rot,
    rot_exp,
    rot_to_quat,
    skew,
    tangent_dim,
)
from .synthgen import GRAVITY, NoiseSpec
from .validation import check_positive, symmetrize

MAHALANOBIS_GATE_3DOF = float(chi2.ppf(0.999, df=3))

_I3 = np.eye(3)
_I6 = np.eye(6)


@dataclass
class KinematicMeasurement:
    """Base-frame foot position with its lifted joint-noise covariance."""

    foot: str
    fk: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.fk = np.asarray(self.fk, dtype=float).reshape(3)
        self.cov = np.asarray(self.cov, dtype=float).reshape(3, 3)


@dataclass
class IekfBelief:
    """Filter belief: extended pose, biases, tangent covariance, slot map."""

    X: ExtendedPose
    bias: np.ndarray           # (6,) gyro then accel
    P: np.ndarray              # (15+3k, 15+3k)
    contact_ids: list[str]     # foot id per contact slot

    @property
    def k(self) -> int:
        return self.X.k

    def copy(self) -> "IekfBelief":
        return IekfBelief(self.X.copy(), self.bias.copy(), self.P.copy(),
                          list(self.contact_ids))

    def slot_of(self, foot: str) -> int:
        return self.contact_ids.index(foot)


def build_A(X: ExtendedPose) -> np.ndarray:
    """Right-invariant error dynamics matrix, generalized to k contacts.

    Only the bias columns depend on the state; the group sub-block is the
    constant gravity/integration structure.
    """
    k = X.k
    n = tangent_dim(k)
    g = group_dim(k)
    A = np.zeros((n, n))
    A[3:6, 0:3] = skew(GRAVITY)
    A[6:9, 3:6] = np.eye(3)
    bw = g
    ba = g + 3
    A[0:3, bw:bw + 3] = -X.R
    A[3:6, bw:bw + 3] = -skew(X.v) @ X.R
    A[6:9, bw:bw + 3] = -skew(X.p) @ X.R
    for j in range(k):
        A[9 + 3 * j: 12 + 3 * j, bw:bw + 3] = -skew(X.d[j]) @ X.R
    A[3:6, ba:ba + 3] = -X.R
    return A


def noise_covariance(noise: NoiseSpec, k: int, dt: float,
                     contact_sigmas=None) -> np.ndarray:
    """Discrete covariance of the stacked noise vector.

    Layout (w_gyro, w_accel, w_accel*dt, w_d x k, w_bias_gyro, w_bias_accel);
    the position slot is the accelerometer noise scaled by dt, hence the
    fully correlated off-diagonal block.
    """
    n = group_dim(k) + 6
    Q = np.zeros((n, n))
    I3 = np.eye(3)
    Q[0:3, 0:3] = noise.sigma_gyro**2 / dt * I3
    va = noise.sigma_accel**2 / dt
    Q[3:6, 3:6] = va * I3
    Q[6:9, 6:9] = va * dt * dt * I3
    Q[3:6, 6:9] = va * dt * I3
    Q[6:9, 3:6] = va * dt * I3
    for j in range(k):
        sd = noise.sigma_contact if contact_sigmas is None else contact_sigmas[j]
        Q[9 + 3 * j: 12 + 3 * j, 9 + 3 * j: 12 + 3 * j] = sd**2 / dt * I3
    g = group_dim(k)
    Q[g:g + 3, g:g + 3] = noise.sigma_gyro_bias**2 / dt * I3
    Q[g + 3:g + 6, g + 3:g + 6] = noise.sigma_accel_bias**2 / dt * I3
    return Q


def propagate_mean(X: ExtendedPose, bias, gyro, accel, dt: float) -> ExtendedPose:
    """Exact discrete integration with zero-order-hold body rates."""
    w = gyro - bias[:3]
    a = accel - bias[3:]
    acc_w = X.R @ a + GRAVITY
    return ExtendedPose(
        X.R @ rot_exp(w * dt),
        X.v + acc_w * dt,
        X.p + X.v * dt + 0.5 * acc_w * dt * dt,
        X.d.copy(),
    )


_Q_CACHE: dict = {}


def _cached_noise_covariance(noise: NoiseSpec, k: int, dt: float) -> np.ndarray:
    key = (id(noise), k, dt)
    Q = _Q_CACHE.get(key)
    if Q is None:
        Q = noise_covariance(noise, k, dt)
        if len(_Q_CACHE) < 512:
            _Q_CACHE[key] = Q
    return Q


def iekf_propagate(belief: IekfBelief, imu, dt: float,
                   noise: NoiseSpec) -> IekfBelief:
    """IMU propagation: exact mean, first-order covariance (Phi = I + A dt)."""
    check_positive(dt, "dt")
    X = belief.X
    k = X.k
    n = tangent_dim(k)
    A = build_A(X)
    Phi = np.eye(n) + A * dt
    B = np.zeros((n, group_dim(k) + 6))
    B[:group_dim(k), :group_dim(k)] = adjoint(X) * dt
    B[group_dim(k):, group_dim(k):] = _I6 * dt
    Q = _cached_noise_covariance(noise, k, dt)
    P = Phi @ belief.P @ Phi.T + B @ Q @ B.T
    X_new = propagate_mean(X, belief.bias, imu.gyro, imu.accel, dt)
    return IekfBelief(X_new, belief.bias.copy(), symmetrize(P),
                      list(belief.contact_ids))


def iekf_update(belief: IekfBelief, measurements: list[KinematicMeasurement],
                gate: bool = True) -> IekfBelief:
    """Stacked right-invariant kinematic update with per-foot gating."""
    if not measurements:
        return belief
    X = belief.X
    k = X.k
    n = tangent_dim(k)
    rows = []
    zs = []
    covs = []
    for meas in measurements:
        if meas.foot not in belief.contact_ids:
            raise ValueError(f"measurement for inactive contact {meas.foot}")
        j = belief.slot_of(meas.foot)
        # position block of X (X^-1 b + V) for the stacked observation
        z = X.R @ meas.fk + X.p - X.d[j]
        H = np.zeros((3, n))
        H[:, 6:9] = -_I3
        H[:, 9 + 3 * j: 12 + 3 * j] = _I3
        Nbar = X.R @ meas.cov @ X.R.T
        if gate:
            P = belief.P
            a = slice(6, 9)
            b = slice(9 + 3 * j, 12 + 3 * j)
            S_j = P[a, a] - P[a, b] - P[b, a] + P[b, b] + Nbar
            m2 = float(z @ np.linalg.solve(S_j, z))
            if m2 > MAHALANOBIS_GATE_3DOF:
                continue
        rows.append(H)
        zs.append(z)
        covs.append(Nbar)
    if not rows:
        return belief
    Nbar = np.zeros((len(covs) * 3, len(covs) * 3))
    for i, c in enumerate(covs):
        Nbar[3 * i:3 * i + 3, 3 * i:3 * i + 3] = c
    H = np.vstack(rows) if len(rows) > 1 else rows[0]
    z = np.concatenate(zs) if len(zs) > 1 else zs[0]
    PHt = belief.P @ H.T
    S = H @ PHt + Nbar
    try:
        K = PHt @ np.linalg.solve(S, np.eye(S.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"singular innovation covariance ({exc})") from exc
    delta = K @ z
    g = group_dim(k)
    X_new = group_exp(delta[:g], k).compose(X)
    bias_new = belief.bias + delta[g:]
    IKH = np.eye(n) - K @ H
    P_new = symmetrize(IKH @ belief.P @ IKH.T + K @ Nbar @ K.T)
    return IekfBelief(X_new, bias_new, P_new, list(belief.contact_ids))


def add_contact(belief: IekfBelief, foot: str, fk,
                inflation_std: float) -> IekfBelief:
    """Augment a touch-down contact: d_new = p + R fk, covariance lifted
    from the position block plus isotropic inflation."""
    if foot in belief.contact_ids:
        raise ValueError(f"contact {foot} already active")
    X = belief.X
    k = X.k
    n_old = tangent_dim(k)
    n_new = tangent_dim(k + 1)
    fk = np.asarray(fk, dtype=float).reshape(3)
    d_new = X.p + X.R @ fk
    X_new = ExtendedPose(X.R.copy(), X.v.copy(), X.p.copy(),
                         np.vstack([X.d, d_new[None, :]]))
    # tangent index maps: old slot i -> new slot i, new contact block at end
    # of the group part, bias shifted by 3
    J = np.zeros((n_new, n_old))
    g_old = group_dim(k)
    J[:g_old, :g_old] = np.eye(g_old)
    J[g_old + 3:, g_old:] = np.eye(6)
    J[g_old:g_old + 3, 6:9] = np.eye(3)  # right-invariant lift copies xi_p
    P_new = J @ belief.P @ J.T
    P_new[g_old:g_old + 3, g_old:g_old + 3] += inflation_std**2 * np.eye(3)
    return IekfBelief(X_new, belief.bias.copy(), symmetrize(P_new),
                      list(belief.contact_ids) + [foot])


def remove_contact(belief: IekfBelief, foot: str) -> IekfBelief:
    """Drop a lift-off contact's state row and covariance rows/columns."""
    j = belief.slot_of(foot)
    X = belief.X
    k = X.k
    keep = [i for i in range(tangent_dim(k))
            if not (9 + 3 * j <= i < 12 + 3 * j)]
    P_new = belief.P[np.ix_(keep, keep)]
    d_new = np.delete(X.d, j, axis=0)
    ids = [f for f in belief.contact_ids if f != foot]
    return IekfBelief(ExtendedPose(X.R.copy(), X.v.copy(), X.p.copy(), d_new),
                      belief.bias.copy(), P_new, ids)


def manage_contacts(belief: IekfBelief, contacts, measurements,
                    inflation_std: float = 0.03) -> IekfBelief:
    """Apply the touch-down/lift-off lifecycle for this frame."""
    meas_by_foot = {m.foot: m for m in measurements}
    for foot in list(belief.contact_ids):
        if not contacts.in_contact(foot):
            belief = remove_contact(belief, foot)
    for foot_idx, foot in enumerate(FOOT_ORDER):
        if contacts.flags[foot_idx] and foot not in belief.contact_ids \
                and foot in meas_by_foot:
            belief = add_contact(belief, foot, meas_by_foot[foot].fk,
                                 inflation_std)
    return belief


class IekfEstimator(TrajectoryEstimator):
    """Right-invariant EKF over a synchronized sensor stream.

    Parameters mirror the shared NoiseSpec plus initial-state settings;
    `gating` toggles the per-foot Mahalanobis outlier gate.
    """

    def __init__(self, noise=None, gating=True, contact_inflation_std=0.03,
                 init_position=(0.0, 0.0, 0.0), init_velocity=(0.0, 0.0, 0.0),
                 init_quaternion=(0.0, 0.0, 0.0, 1.0),
                 init_att_std=0.1, init_vel_std=0.1, init_pos_std=0.1,
                 init_bias_gyro_std=0.01, init_bias_accel_std=0.1):
        self.noise = noise
        self.gating = gating
        self.contact_inflation_std = contact_inflation_std
        self.init_position = init_position
        self.init_velocity = init_velocity
        self.init_quaternion = init_quaternion
        self.init_att_std = init_att_std
        self.init_vel_std = init_vel_std
        self.init_pos_std = init_pos_std
        self.init_bias_gyro_std = init_bias_gyro_std
        self.init_bias_accel_std = init_bias_accel_std

    def reset(self, first_frame: SensorFrame | None = None) -> None:
        self.noise_ = self.noise or NoiseSpec()
        X0 = ExtendedPose(quat_to_rot(self.init_quaternion),
                          np.asarray(self.init_velocity, dtype=float),
                          np.asarray(self.init_position, dtype=float))
        P0 = np.diag([self.init_att_std**2] * 3 + [self.init_vel_std**2] * 3
                     + [self.init_pos_std**2] * 3
                     + [self.init_bias_gyro_std**2] * 3
                     + [self.init_bias_accel_std**2] * 3).astype(float)
        self.belief_ = IekfBelief(X0, np.zeros(6), P0, [])
        self.t_prev_ = None

    def _measurements(self, frame: SensorFrame) -> list[KinematicMeasurement]:
        default_cov = self.noise_.sigma_kin**2 * np.eye(3) \
            + 1e-12 * np.eye(3)
        out = []
        for foot_idx, foot in enumerate(FOOT_ORDER):
            if not frame.contacts.flags[foot_idx]:
                continue
            kin = frame.foot_kinematics(foot)
            if kin is None:
                continue
            cov = kin.cov if kin.cov is not None else default_cov
            out.append(KinematicMeasurement(foot=foot, fk=kin.fk, cov=cov))
        return out

    def step(self, frame: SensorFrame) -> EstimateRecord:
        if self.t_prev_ is not None:
            dt = frame.t - self.t_prev_
            self.belief_ = iekf_propagate(self.belief_, frame.imu, dt,
                                          self.noise_)
        self.t_prev_ = frame.t
        meas = self._measurements(frame)
        self.belief_ = manage_contacts(self.belief_, frame.contacts, meas,
                                       self.contact_inflation_std)
        active = [m for m in meas if m.foot in self.belief_.contact_ids]
        self.belief_ = iekf_update(self.belief_, active, gate=self.gating)
        X = self.belief_.X
        return EstimateRecord(t=frame.t, p=X.p.copy(), q=rot_to_quat(X.R),
                              v=X.v.copy())
