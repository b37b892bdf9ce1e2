"""Synthetic ground truth, IMU and leg-kinematics generation.

Ground truth follows closed-form motion profiles.  IMU samples are emitted
as increment-consistent inversions of the discrete dynamics (the gyro is the
exact rotation increment over the sample interval, the accelerometer the
exact velocity increment), so integrating the noiseless stream with the
discrete model reproduces the trajectory to machine precision.  Leg data
places world-fixed stance anchors per gait cycle and emits base-frame foot
positions and relative velocities consistent with leg odometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import (
    FOOT_ORDER,
    ContactState,
    FootKinematics,
    GroundTruthRecord,
    ImuSample,
    SensorFrame,
    synchronize,
)
from .liegroups import cross3, rot_exp, rot_log, rot_to_quat
from .validation import check_positive

GRAVITY = np.array([0.0, 0.0, -9.80665])

PROFILE_KINDS = ("rest", "line", "circle", "figure8")


@dataclass
class MotionProfile:
    """Closed-form base motion: rest, straight line, circle or figure-eight."""

    kind: str = "rest"
    speed: float = 0.5
    radius: float = 2.0
    yaw_rate: float = 0.3
    duration: float = 10.0
    rate: float = 400.0
    start: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}; "
                             f"expected one of {PROFILE_KINDS}")
        check_positive(self.rate, "rate")
        check_positive(self.duration, "duration")
        self.start = np.asarray(self.start, dtype=float).reshape(3)


@dataclass
class GaitSpec:
    """Periodic stance schedule and nominal base-frame foot placements."""

    period: float = 0.7
    duty: float = 0.6
    phase_offsets: tuple = (0.0, 0.5, 0.5, 0.0)  # LF, RF, LH, RH (trot)
    foot_offsets: tuple = (
        (0.36, 0.22, -0.5),
        (0.36, -0.22, -0.5),
        (-0.36, 0.22, -0.5),
        (-0.36, -0.22, -0.5),
    )
    step_height: float = 0.05

    def __post_init__(self):
        check_positive(self.period, "gait period")
        if not 0.0 < self.duty <= 1.0:
            raise ValueError("duty factor must be in (0, 1]")
        if len(self.phase_offsets) != 4 or len(self.foot_offsets) != 4:
            raise ValueError("gait needs 4 phase offsets and 4 foot offsets")

    @staticmethod
    def standing() -> "GaitSpec":
        return GaitSpec(duty=1.0, phase_offsets=(0.0, 0.0, 0.0, 0.0))


@dataclass
class NoiseSpec:
    """Continuous-time noise densities and initial constant biases.

    White densities are per sqrt(Hz); bias and contact walks per sqrt(s).
    `sigma_kin` is a per-sample standard deviation applied to both the foot
    position (m) and relative velocity (m/s) channels.
    """

    sigma_gyro: float = 2e-3
    sigma_accel: float = 1e-2
    sigma_gyro_bias: float = 2e-5
    sigma_accel_bias: float = 1e-4
    sigma_contact: float = 1e-3
    sigma_kin: float = 2e-3
    sigma_mag: float = 0.01
    gyro_bias0: tuple = (0.002, -0.001, 0.0005)
    accel_bias0: tuple = (0.02, -0.01, 0.015)
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_gyro", "sigma_accel", "sigma_gyro_bias",
                     "sigma_accel_bias", "sigma_contact", "sigma_kin",
                     "sigma_mag"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")

    @staticmethod
    def zero(seed: int = 0) -> "NoiseSpec":
        return NoiseSpec(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                         (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), seed)


@dataclass
class GroundTruthMotion:
    """Sampled analytic trajectory with its instantaneous rates."""

    t: np.ndarray          # (N,)
    R: np.ndarray          # (N, 3, 3) body-to-world
    p: np.ndarray          # (N, 3) world
    v: np.ndarray          # (N, 3) world
    omega: np.ndarray      # (N, 3) body rates
    accel: np.ndarray      # (N, 3) world acceleration

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def to_records(self) -> list[GroundTruthRecord]:
        return [
            GroundTruthRecord(t=float(self.t[i]), p=self.p[i],
                              q=rot_to_quat(self.R[i]), v=self.v[i])
            for i in range(len(self.t))
        ]


def _rotz(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def generate_ground_truth(profile: MotionProfile,
                          times=None) -> GroundTruthMotion:
    """Evaluate the profile analytically, by default at the sample rate."""
    if times is None:
        n = int(round(profile.duration * profile.rate)) + 1
        t = np.arange(n) / profile.rate
    else:
        t = np.asarray(times, dtype=float).reshape(-1)
        n = len(t)
    p = np.zeros((n, 3))
    v = np.zeros((n, 3))
    a = np.zeros((n, 3))
    R = np.zeros((n, 3, 3))
    omega = np.zeros((n, 3))

    if profile.kind == "rest":
        R[:] = np.eye(3)
        p[:] = profile.start
    elif profile.kind == "line":
        R[:] = np.eye(3)
        vel = np.array([profile.speed, 0.0, 0.0])
        p[:] = profile.start + t[:, None] * vel
        v[:] = vel
    elif profile.kind == "circle":
        r = check_positive(profile.radius, "radius")
        s = check_positive(profile.speed, "speed")
        w = s / r
        th = w * t
        p[:, 0] = profile.start[0] + r * np.sin(th)
        p[:, 1] = profile.start[1] + r * (1.0 - np.cos(th))
        p[:, 2] = profile.start[2]
        v[:, 0] = s * np.cos(th)
        v[:, 1] = s * np.sin(th)
        a[:, 0] = -s * w * np.sin(th)
        a[:, 1] = s * w * np.cos(th)
        for i in range(n):
            R[i] = _rotz(th[i])
        omega[:, 2] = w
    else:  # figure8: 1:2 Lissajous in position, uniform yaw spin
        A = check_positive(profile.radius, "radius")
        B = 0.5 * A
        W = profile.speed / np.hypot(A, 2.0 * B)
        th = W * t
        p[:, 0] = profile.start[0] + A * np.sin(th)
        p[:, 1] = profile.start[1] + B * np.sin(2.0 * th)
        p[:, 2] = profile.start[2]
        v[:, 0] = A * W * np.cos(th)
        v[:, 1] = 2.0 * B * W * np.cos(2.0 * th)
        a[:, 0] = -A * W * W * np.sin(th)
        a[:, 1] = -4.0 * B * W * W * np.sin(2.0 * th)
        for i in range(n):
            R[i] = _rotz(profile.yaw_rate * t[i])
        omega_body = np.array([0.0, 0.0, profile.yaw_rate])
        omega[:] = omega_body

    return GroundTruthMotion(t=t, R=R, p=p, v=v, omega=omega, accel=a)


def discrete_rates(motion: GroundTruthMotion) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample gyro/accel that reproduce the trajectory under the
    discrete dynamics R+ = R Exp(w dt), v+ = v + (R a_b + g) dt.

    The final sample falls back to the analytic instantaneous rates.
    """
    n = len(motion.t)
    dt = motion.dt
    omega = np.zeros((n, 3))
    accel = np.zeros((n, 3))
    for k in range(n - 1):
        omega[k] = rot_log(motion.R[k].T @ motion.R[k + 1]) / dt
        accel[k] = motion.R[k].T @ ((motion.v[k + 1] - motion.v[k]) / dt - GRAVITY)
    if n >= 1:
        omega[n - 1] = motion.omega[n - 1]
        accel[n - 1] = motion.R[n - 1].T @ (motion.accel[n - 1] - GRAVITY)
    return omega, accel


def simulate_imu(motion: GroundTruthMotion, noise: NoiseSpec,
                 with_mag: bool = False, mag_reference=(1.0, 0.0, 0.0)):
    """Corrupt the inverse-dynamics rates with bias walks and white noise.

    Returns (samples, gyro_bias_trace, accel_bias_trace).
    """
    rng = np.random.default_rng(noise.seed)
    n = len(motion.t)
    dt = motion.dt if n > 1 else 1.0 / 400.0
    sq_dt = np.sqrt(dt)
    omega, accel = discrete_rates(motion)

    bg = np.asarray(noise.gyro_bias0, dtype=float).copy()
    ba = np.asarray(noise.accel_bias0, dtype=float).copy()
    bg_trace = np.zeros((n, 3))
    ba_trace = np.zeros((n, 3))
    samples = []
    mag_ref = np.asarray(mag_reference, dtype=float)
    for k in range(n):
        bg_trace[k] = bg
        ba_trace[k] = ba
        wg = noise.sigma_gyro / sq_dt * rng.standard_normal(3)
        wa = noise.sigma_accel / sq_dt * rng.standard_normal(3)
        mag = None
        if with_mag:
            mag = motion.R[k].T @ mag_ref + noise.sigma_mag * rng.standard_normal(3)
        samples.append(ImuSample(t=float(motion.t[k]), gyro=omega[k] + bg + wg,
                                 accel=accel[k] + ba + wa, mag=mag))
        bg = bg + noise.sigma_gyro_bias * sq_dt * rng.standard_normal(3)
        ba = ba + noise.sigma_accel_bias * sq_dt * rng.standard_normal(3)
    return samples, bg_trace, ba_trace


def _stance_at(gait: GaitSpec, foot_idx: int, t: float) -> bool:
    phase = (t / gait.period + gait.phase_offsets[foot_idx]) % 1.0
    return phase < gait.duty or gait.duty >= 1.0


def _cycle_index(gait: GaitSpec, foot_idx: int, t: float) -> int:
    if gait.duty >= 1.0:
        return 0  # permanent stance: anchors are planted once
    return int(np.floor(t / gait.period + gait.phase_offsets[foot_idx]))


def _interp_state(motion: GroundTruthMotion, t: float):
    """Ground-truth pose at an arbitrary time (nearest sample is enough for
    anchor planting; the anchor definition is what the estimators see)."""
    k = int(np.clip(round(t * (len(motion.t) - 1) / max(motion.t[-1], 1e-12)),
                    0, len(motion.t) - 1))
    return motion.R[k], motion.p[k]


def simulate_leg_data(motion: GroundTruthMotion, gait: GaitSpec,
                      noise: NoiseSpec):
    """Generate per-foot kinematics and contact flags for the gait.

    Stance feet hold a world-fixed anchor d (with optional sigma_contact
    random walk); the emitted relative velocity inverts leg odometry exactly
    in the noiseless case.  Swing feet follow a smooth arc with contact off.

    Returns (kinematics, contacts) as (t, payload) streams.
    """
    rng = np.random.default_rng(noise.seed + 1_000_003)
    n = len(motion.t)
    dt = motion.dt if n > 1 else 1.0 / 400.0
    sq_dt = np.sqrt(dt)
    omega_disc, _ = discrete_rates(motion)
    offsets = [np.asarray(o, dtype=float) for o in gait.foot_offsets]

    # per-foot anchor state: (cycle_index, anchor_position)
    anchors: list[tuple[int, np.ndarray] | None] = [None] * 4

    def plant(foot_idx: int, cycle: int) -> np.ndarray:
        t_td = max((cycle - gait.phase_offsets[foot_idx]) * gait.period, 0.0)
        Rtd, ptd = _interp_state(motion, t_td)
        return ptd + Rtd @ offsets[foot_idx]

    kinematics = []
    contacts = []
    for k in range(n):
        t = float(motion.t[k])
        Rk, pk, vk = motion.R[k], motion.p[k], motion.v[k]
        feet = []
        flags = np.zeros(4, dtype=bool)
        for f in range(4):
            in_stance = _stance_at(gait, f, t)
            flags[f] = in_stance
            cycle = _cycle_index(gait, f, t)
            if in_stance:
                if anchors[f] is None or anchors[f][0] != cycle:
                    anchors[f] = (cycle, plant(f, cycle))
                else:
                    d = anchors[f][1]
                    if noise.sigma_contact > 0.0:
                        d = d + noise.sigma_contact * sq_dt * rng.standard_normal(3)
                    anchors[f] = (cycle, d)
                d = anchors[f][1]
                fk_true = Rk.T @ (d - pk)
                v_rel_true = -(Rk.T @ vk + cross3(omega_disc[k], fk_true))
            else:
                # swing arc from the lift-off anchor to the next touchdown
                d_prev = anchors[f][1] if anchors[f] is not None \
                    else plant(f, cycle)
                d_next = plant(f, cycle + 1)
                t_lo = (cycle - gait.phase_offsets[f] + gait.duty) * gait.period
                t_td = (cycle + 1 - gait.phase_offsets[f]) * gait.period
                swing = max(t_td - t_lo, dt)
                s = float(np.clip((t - t_lo) / swing, 0.0, 1.0))
                w = d_prev + s * (d_next - d_prev)
                w_dot = (d_next - d_prev) / swing
                arc = gait.step_height * np.sin(np.pi * s)
                w = w + np.array([0.0, 0.0, arc])
                w_dot = w_dot + np.array(
                    [0.0, 0.0, gait.step_height * np.pi * np.cos(np.pi * s) / swing])
                fk_true = Rk.T @ (w - pk)
                v_rel_true = -cross3(omega_disc[k], fk_true) \
                    + Rk.T @ (w_dot - vk)
            fk = fk_true + noise.sigma_kin * rng.standard_normal(3) \
                if noise.sigma_kin > 0.0 else fk_true
            v_rel = v_rel_true + noise.sigma_kin * rng.standard_normal(3) \
                if noise.sigma_kin > 0.0 else v_rel_true
            feet.append(FootKinematics(foot=FOOT_ORDER[f], fk=fk, v_rel=v_rel))
        kinematics.append((t, feet))
        contacts.append((t, ContactState(flags)))
    return kinematics, contacts


@dataclass
class SyntheticDataset:
    motion: GroundTruthMotion
    groundtruth: list[GroundTruthRecord]
    imu: list[ImuSample]
    kinematics: list
    contacts: list
    gyro_bias: np.ndarray
    accel_bias: np.ndarray

    def frames(self) -> list[SensorFrame]:
        return synchronize(self.imu, self.kinematics, self.contacts)


def generate_dataset(profile: MotionProfile, gait: GaitSpec | None = None,
                     noise: NoiseSpec | None = None,
                     with_mag: bool = False) -> SyntheticDataset:
    """One-call generation of a coherent synthetic dataset."""
    gait = gait or GaitSpec()
    noise = noise or NoiseSpec()
    motion = generate_ground_truth(profile)
    imu, bg, ba = simulate_imu(motion, noise, with_mag=with_mag)
    kin, contacts = simulate_leg_data(motion, gait, noise)
    return SyntheticDataset(
        motion=motion,
        groundtruth=motion.to_records(),
        imu=imu,
        kinematics=kin,
        contacts=contacts,
        gyro_bias=bg,
        accel_bias=ba,
    )


def integrate_discrete(imu: list[ImuSample], R0, v0, p0,
                       gravity=GRAVITY) -> GroundTruthMotion:
    """Reference strapdown integrator using the exact discrete model.

    Serves as the closure oracle: with zero-noise, zero-bias samples the
    output matches the generating trajectory.
    """
    n = len(imu)
    t = np.array([s.t for s in imu])
    R = np.zeros((n, 3, 3))
    v = np.zeros((n, 3))
    p = np.zeros((n, 3))
    R[0], v[0], p[0] = np.asarray(R0, dtype=float), np.asarray(v0, dtype=float), \
        np.asarray(p0, dtype=float)
    g = np.asarray(gravity, dtype=float)
    for k in range(n - 1):
        dt = imu[k + 1].t - imu[k].t
        acc_w = R[k] @ imu[k].accel + g
        R[k + 1] = R[k] @ rot_exp(imu[k].gyro * dt)
        v[k + 1] = v[k] + acc_w * dt
        p[k + 1] = p[k] + v[k] * dt + 0.5 * acc_w * dt * dt
    return GroundTruthMotion(t=t, R=R, p=p, v=v,
                             omega=np.zeros((n, 3)), accel=np.zeros((n, 3)))
