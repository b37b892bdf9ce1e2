"""Trajectory evaluation: rigid alignment, ATE, RPE, velocity RMSE, timing.

Estimate timestamps are associated to the reference by interpolation (linear
in position, shortest-arc SLERP in orientation); no extrapolation.  Spatial
RPE uses consecutive non-overlapping segments of >= 1 m reference path
length; temporal RPE uses consecutive frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .liegroups import quat_to_rot, rot_log

SPATIAL_WINDOW_M = 1.0


class MetricError(ValueError):
    """Raised when a metric cannot be computed from the given trajectories."""


@dataclass
class Trajectory:
    """Time-ordered poses with optional velocities."""

    t: np.ndarray            # (N,)
    p: np.ndarray            # (N, 3)
    q: np.ndarray            # (N, 4) scalar-last unit quaternions
    v: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 4)
        if self.v is not None:
            self.v = np.asarray(self.v, dtype=float).reshape(-1, 3)
        n = len(self.t)
        if self.p.shape[0] != n or self.q.shape[0] != n:
            raise MetricError("trajectory field lengths disagree")
        if n > 1 and np.any(np.diff(self.t) <= 0.0):
            raise MetricError("trajectory timestamps must strictly increase")
        norms = np.linalg.norm(self.q, axis=1)
        if n and np.abs(norms - 1.0).max() > 1e-6:
            raise MetricError("trajectory quaternions must be unit")

    @staticmethod
    def from_records(records) -> "Trajectory":
        if not records:
            raise MetricError("empty trajectory")
        return Trajectory(
            t=np.array([r.t for r in records]),
            p=np.stack([r.p for r in records]),
            q=np.stack([r.q for r in records]),
            v=np.stack([r.v for r in records]),
        )

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class MetricReport:
    """The six error rows of the comparison table plus timing statistics.

    Fields are None when a metric is not computable from the inputs (no
    velocity channel, or no complete spatial segment on short paths).
    """

    ate_m: float
    ate_vel_mps: float | None
    rpe_trans_1m_m: float | None
    rpe_trans_1frame_m: float
    rpe_rot_1m_deg: float | None
    rpe_rot_1frame_deg: float
    timing_mean_s: float | None = None
    timing_median_s: float | None = None
    timing_p99_s: float | None = None

    ROW_ORDER = (
        ("ate_m", "ATE [m]"),
        ("ate_vel_mps", "ATE_vel [m/s]"),
        ("rpe_trans_1m_m", "RPE (delta=1 m) [m]"),
        ("rpe_trans_1frame_m", "RPE (delta=1 frame) [m]"),
        ("rpe_rot_1m_deg", "RPE (delta=1 m) [deg]"),
        ("rpe_rot_1frame_deg", "RPE (delta=1 frame) [deg]"),
    )

    def as_dict(self) -> dict:
        out = {key: getattr(self, key) for key, _ in self.ROW_ORDER}
        out["timing_mean_s"] = self.timing_mean_s
        out["timing_median_s"] = self.timing_median_s
        out["timing_p99_s"] = self.timing_p99_s
        return out


def slerp(q0, q1, alpha: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between scalar-last quaternions."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        out = q0 + alpha * (q1 - q0)
        return out / np.linalg.norm(out)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    out = np.sin((1.0 - alpha) * theta) / s * q0 + np.sin(alpha * theta) / s * q1
    return out / np.linalg.norm(out)


def interpolate_pose(traj: Trajectory, t: float):
    """Pose (p, q) at time t; linear in position, SLERP in orientation."""
    if len(traj) == 0:
        raise MetricError("empty trajectory")
    if t < traj.t[0] or t > traj.t[-1]:
        raise MetricError(
            f"time {t} outside trajectory span [{traj.t[0]}, {traj.t[-1]}]")
    i = int(np.searchsorted(traj.t, t, side="right")) - 1
    i = min(max(i, 0), len(traj) - 1)
    if traj.t[i] == t or i == len(traj) - 1:
        return traj.p[i].copy(), traj.q[i].copy()
    alpha = (t - traj.t[i]) / (traj.t[i + 1] - traj.t[i])
    p = (1.0 - alpha) * traj.p[i] + alpha * traj.p[i + 1]
    q = slerp(traj.q[i], traj.q[i + 1], alpha)
    return p, q


def _interpolate_velocity(traj: Trajectory, t: float) -> np.ndarray:
    i = int(np.searchsorted(traj.t, t, side="right")) - 1
    i = min(max(i, 0), len(traj) - 1)
    if traj.t[i] == t or i == len(traj) - 1:
        return traj.v[i].copy()
    alpha = (t - traj.t[i]) / (traj.t[i + 1] - traj.t[i])
    return (1.0 - alpha) * traj.v[i] + alpha * traj.v[i + 1]


def associate(est: Trajectory, ref: Trajectory):
    """Interpolate the reference at every estimate timestamp inside its span.

    Returns (times, est_indices, ref_positions, ref_quaternions).
    """
    mask = (est.t >= ref.t[0]) & (est.t <= ref.t[-1])
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        raise MetricError("trajectories do not overlap in time")
    ps, qs = [], []
    for i in idx:
        p, q = interpolate_pose(ref, float(est.t[i]))
        ps.append(p)
        qs.append(q)
    return est.t[idx], idx, np.stack(ps), np.stack(qs)


def _umeyama_points(src: np.ndarray, ref: np.ndarray, require_unique: bool):
    if src.shape[0] < 3:
        raise MetricError("need at least 3 associated pose pairs to align")
    mu_s = src.mean(axis=0)
    mu_r = ref.mean(axis=0)
    cov = (ref - mu_r).T @ (src - mu_s) / src.shape[0]
    U, S, Vt = np.linalg.svd(cov)
    if require_unique and S[1] < 1e-12 * max(S[0], 1.0):
        raise MetricError("degenerate geometry: alignment is not unique")
    D = np.eye(3)
    if np.linalg.det(U @ Vt) < 0.0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    t = mu_r - R @ mu_s
    return R, t


def umeyama_se3(est: Trajectory, ref: Trajectory):
    """Least-squares rigid alignment (no scale) of est onto ref positions."""
    _, idx, ref_p, _ = associate(est, ref)
    return _umeyama_points(est.p[idx], ref_p, require_unique=True)


def ate(est: Trajectory, ref: Trajectory, align: bool = True) -> float:
    """RMSE of position residuals, optionally after SE(3) Umeyama alignment.

    Degenerate geometry (rest, straight lines) leaves the aligning rotation
    non-unique but every optimum yields the same residual, so ATE stays
    defined there.
    """
    _, idx, ref_p, _ = associate(est, ref)
    p = est.p[idx]
    if align:
        R, t = _umeyama_points(p, ref_p, require_unique=False)
        p = p @ R.T + t
    res = np.linalg.norm(p - ref_p, axis=1)
    return float(np.sqrt(np.mean(res**2)))


def _relative_pose(p_i, q_i, p_j, q_j):
    """(R, t) of the motion from pose i to pose j, expressed in frame i."""
    Ri = quat_to_rot(q_i)
    dR = Ri.T @ quat_to_rot(q_j)
    dt = Ri.T @ (p_j - p_i)
    return dR, dt


def _segment_indices_spatial(ref_p: np.ndarray, window: float):
    """Consecutive non-overlapping segments of >= `window` reference length."""
    steps = np.linalg.norm(np.diff(ref_p, axis=0), axis=1)
    segments = []
    start = 0
    acc = 0.0
    for i, step in enumerate(steps):
        acc += step
        if acc >= window:
            segments.append((start, i + 1))
            start = i + 1
            acc = 0.0
    return segments


def rpe(est: Trajectory, ref: Trajectory, window: str = "frame",
        mode: str = "trans") -> float:
    """Relative pose error RMSE.

    window: "spatial" (1 m of reference path) or "frame" (consecutive).
    mode:   "trans" (m) or "rot" (geodesic angle, degrees).
    """
    if window not in ("spatial", "frame"):
        raise MetricError(f"unknown RPE window {window!r}")
    if mode not in ("trans", "rot"):
        raise MetricError(f"unknown RPE mode {mode!r}")
    _, idx, ref_p, ref_q = associate(est, ref)
    est_p = est.p[idx]
    est_q = est.q[idx]
    if window == "frame":
        segments = [(i, i + 1) for i in range(len(idx) - 1)]
    else:
        segments = _segment_indices_spatial(ref_p, SPATIAL_WINDOW_M)
    if not segments:
        raise MetricError("no complete RPE segment in the overlap")
    errs = np.zeros(len(segments))
    for s, (i, j) in enumerate(segments):
        dR_ref, dt_ref = _relative_pose(ref_p[i], ref_q[i], ref_p[j], ref_q[j])
        dR_est, dt_est = _relative_pose(est_p[i], est_q[i], est_p[j], est_q[j])
        E_R = dR_ref.T @ dR_est
        E_t = dR_ref.T @ (dt_est - dt_ref)
        if mode == "trans":
            errs[s] = np.linalg.norm(E_t)
        else:
            errs[s] = np.degrees(np.linalg.norm(rot_log(E_R)))
    return float(np.sqrt(np.mean(errs**2)))


def velocity_rmse(est: Trajectory, ref: Trajectory) -> float:
    """RMSE of velocity residual norms at associated timestamps."""
    if est.v is None or ref.v is None:
        raise MetricError("velocity channel missing")
    mask = (est.t >= ref.t[0]) & (est.t <= ref.t[-1])
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        raise MetricError("trajectories do not overlap in time")
    res = np.zeros(idx.size)
    for n, i in enumerate(idx):
        res[n] = np.linalg.norm(est.v[i] - _interpolate_velocity(ref, float(est.t[i])))
    return float(np.sqrt(np.mean(res**2)))


def timing_stats(iter_times) -> tuple[float, float, float]:
    """(mean, median, p99) with nearest-rank percentiles."""
    x = np.asarray(list(iter_times), dtype=float)
    if x.size == 0:
        raise MetricError("no timing samples")
    xs = np.sort(x)
    rank = max(int(np.ceil(0.99 * x.size)), 1)
    return float(x.mean()), float(np.median(x)), float(xs[rank - 1])


def evaluate(est_records, gt_records, est_has_velocity: bool = True) -> MetricReport:
    """Full metric report for one estimator run against ground truth."""
    est = Trajectory.from_records(est_records)
    ref = Trajectory.from_records(gt_records)
    if not est_has_velocity:
        est.v = None
    vel = None
    if est.v is not None and ref.v is not None:
        vel = velocity_rmse(est, ref)
    iter_times = [getattr(r, "iter_time", 0.0) for r in est_records]
    has_timing = any(t > 0.0 for t in iter_times)
    mean = med = p99 = None
    if has_timing:
        mean, med, p99 = timing_stats(iter_times)

    def _spatial(mode):
        try:
            return rpe(est, ref, "spatial", mode)
        except MetricError:
            return None  # path shorter than the window: row marked absent

    return MetricReport(
        ate_m=ate(est, ref, align=True),
        ate_vel_mps=vel,
        rpe_trans_1m_m=_spatial("trans"),
        rpe_trans_1frame_m=rpe(est, ref, "frame", "trans"),
        rpe_rot_1m_deg=_spatial("rot"),
        rpe_rot_1frame_deg=rpe(est, ref, "frame", "rot"),
        timing_mean_s=mean,
        timing_median_s=med,
        timing_p99_s=p99,
    )
