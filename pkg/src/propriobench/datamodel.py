"""Canonical sensor/trajectory records, CSV ingestion, TUM export, sync.

CSV schemas (column order fixed, header row mandatory):

  sensor_data.csv     t, wx, wy, wz, ax, ay, az, [mx, my, mz,]
                      contact_lf, contact_rf, contact_lh, contact_rh
  feet_kinematics.csv t, then per foot LF,RF,LH,RH:
                      fk_x, fk_y, fk_z, vrel_x, vrel_y, vrel_z
  groundtruth.csv     t, px, py, pz, qx, qy, qz, qw, vx, vy, vz
  fused_state.csv     t, px, py, pz, qx, qy, qz, qw, vx, vy, vz, iter_time_s

TUM text format: one `timestamp tx ty tz qx qy qz qw` line per pose.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .validation import check_finite, check_unit_quaternion, check_vector

FOOT_ORDER = ("LF", "RF", "LH", "RH")
NUM_FEET = 4


class SchemaError(ValueError):
    """A CSV file does not match its expected schema."""


class DataError(ValueError):
    """A CSV row holds an unparseable or inconsistent value."""


@dataclass
class ImuSample:
    """One IMU reading: body-frame rates and specific force, optional mag."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray
    mag: np.ndarray | None = None

    def __post_init__(self):
        self.gyro = check_vector(self.gyro, 3, "gyro")
        self.accel = check_vector(self.accel, 3, "accel")
        if self.mag is not None:
            self.mag = check_vector(self.mag, 3, "mag")


@dataclass
class FootKinematics:
    """Base-frame foot position and relative velocity for one foot.

    `cov` is the lifted joint-noise covariance J_p Cov(w_q) J_p^T; left as
    None the consumer falls back to its configured isotropic default.
    """

    foot: str
    fk: np.ndarray
    v_rel: np.ndarray
    cov: np.ndarray | None = None

    def __post_init__(self):
        if self.foot not in FOOT_ORDER:
            raise ValueError(f"unknown foot id {self.foot!r}")
        self.fk = check_vector(self.fk, 3, "fk")
        self.v_rel = check_vector(self.v_rel, 3, "v_rel")


@dataclass
class ContactState:
    """Per-foot stance flags in LF, RF, LH, RH order."""

    flags: np.ndarray

    def __post_init__(self):
        flags = np.asarray(self.flags)
        if flags.shape != (NUM_FEET,):
            raise ValueError("contact state needs exactly 4 flags")
        self.flags = flags.astype(bool)

    def stance_count(self) -> int:
        return int(self.flags.sum())

    def in_contact(self, foot: str) -> bool:
        return bool(self.flags[FOOT_ORDER.index(foot)])


@dataclass
class SensorFrame:
    """One synchronized timestep of IMU, per-foot kinematics and contacts."""

    t: float
    imu: ImuSample
    feet: list[FootKinematics]
    contacts: ContactState

    def foot_kinematics(self, foot: str) -> FootKinematics | None:
        for fk in self.feet:
            if fk.foot == foot:
                return fk
        return None


@dataclass
class GroundTruthRecord:
    t: float
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.p = check_vector(self.p, 3, "p")
        self.q = check_unit_quaternion(self.q)
        self.v = check_vector(self.v, 3, "v")


@dataclass
class EstimateRecord:
    t: float
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    iter_time: float = 0.0

    def __post_init__(self):
        self.p = check_vector(self.p, 3, "p")
        self.q = check_unit_quaternion(self.q)
        self.v = check_vector(self.v, 3, "v")
        if self.iter_time < 0.0:
            raise ValueError("iter_time must be >= 0")


@dataclass
class LoadReport:
    sensor_rows: int = 0
    kinematics_rows: int = 0
    groundtruth_rows: int = 0
    frames: int = 0
    dropped_frames: int = 0


# ---------------------------------------------------------------------------
# low-level CSV helpers

SENSOR_COLUMNS = ["t", "wx", "wy", "wz", "ax", "ay", "az",
                  "contact_lf", "contact_rf", "contact_lh", "contact_rh"]
SENSOR_MAG_COLUMNS = ["mx", "my", "mz"]
KINEMATICS_COLUMNS = ["t"] + [
    f"{name}_{foot.lower()}"
    for foot in FOOT_ORDER
    for name in ("fk_x", "fk_y", "fk_z", "vrel_x", "vrel_y", "vrel_z")
]
GROUNDTRUTH_COLUMNS = ["t", "px", "py", "pz", "qx", "qy", "qz", "qw", "vx", "vy", "vz"]
FUSED_COLUMNS = GROUNDTRUTH_COLUMNS + ["iter_time_s"]


def _read_rows(path, required: list[str], optional: list[str] | None = None):
    """Parse a headered CSV into float rows; errors carry row/column context."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file (missing header row)")
        header = [h.strip() for h in header]
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        use = list(required)
        if optional and all(col in header for col in optional):
            use = required + optional
        idx = [header.index(c) for c in use]
        rows = []
        for rownum, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            vals = np.empty(len(use))
            for out_i, col_i in enumerate(idx):
                try:
                    vals[out_i] = float(raw[col_i])
                except (ValueError, IndexError):
                    cell = raw[col_i] if col_i < len(raw) else "<missing>"
                    raise DataError(
                        f"{path}: row {rownum}, column {use[out_i]!r}: "
                        f"cannot parse {cell!r}"
                    )
            rows.append(vals)
    return use, rows


def _check_monotone(times, path) -> None:
    for i in range(1, len(times)):
        if times[i] <= times[i - 1]:
            raise DataError(
                f"{path}: non-increasing timestamp at row {i + 2} "
                f"({times[i]} after {times[i - 1]})"
            )


def _scale_time(t: float, timestamp_unit: str) -> float:
    if timestamp_unit == "ns":
        return t * 1e-9
    return t


def load_sensor_csv(path, timestamp_unit: str = "s",
                    contact_force_threshold: float = 30.0):
    """Parse sensor_data.csv into (ImuSample list, (t, ContactState) list).

    Contact columns holding plain 0/1 are used as flags; anything larger is
    treated as a vertical force and thresholded.
    """
    cols, rows = _read_rows(path, SENSOR_COLUMNS, SENSOR_MAG_COLUMNS)
    has_mag = "mx" in cols
    ci = {c: i for i, c in enumerate(cols)}
    times = [_scale_time(r[ci["t"]], timestamp_unit) for r in rows]
    _check_monotone(times, path)
    contact_cols = ["contact_lf", "contact_rf", "contact_lh", "contact_rh"]
    raw_contacts = np.array([[r[ci[c]] for c in contact_cols] for r in rows]) \
        if rows else np.zeros((0, 4))
    force_mode = raw_contacts.size > 0 and raw_contacts.max() > 1.0
    imu, contacts = [], []
    for t, r in zip(times, rows):
        mag = np.array([r[ci["mx"]], r[ci["my"]], r[ci["mz"]]]) if has_mag else None
        imu.append(ImuSample(
            t=t,
            gyro=np.array([r[ci["wx"]], r[ci["wy"]], r[ci["wz"]]]),
            accel=np.array([r[ci["ax"]], r[ci["ay"]], r[ci["az"]]]),
            mag=mag,
        ))
        raw = np.array([r[ci[c]] for c in contact_cols])
        if force_mode:
            flags = raw >= contact_force_threshold
        else:
            flags = raw >= 0.5
        contacts.append((t, ContactState(flags)))
    return imu, contacts


def load_kinematics_csv(path, timestamp_unit: str = "s"):
    """Parse feet_kinematics.csv into a list of (t, [FootKinematics x4])."""
    cols, rows = _read_rows(path, KINEMATICS_COLUMNS)
    ci = {c: i for i, c in enumerate(cols)}
    times = [_scale_time(r[ci["t"]], timestamp_unit) for r in rows]
    _check_monotone(times, path)
    out = []
    for t, r in zip(times, rows):
        feet = []
        for foot in FOOT_ORDER:
            lf = foot.lower()
            feet.append(FootKinematics(
                foot=foot,
                fk=np.array([r[ci[f"fk_x_{lf}"]], r[ci[f"fk_y_{lf}"]],
                             r[ci[f"fk_z_{lf}"]]]),
                v_rel=np.array([r[ci[f"vrel_x_{lf}"]], r[ci[f"vrel_y_{lf}"]],
                                r[ci[f"vrel_z_{lf}"]]]),
            ))
        out.append((t, feet))
    return out


def load_groundtruth_csv(path, timestamp_unit: str = "s") -> list[GroundTruthRecord]:
    cols, rows = _read_rows(path, GROUNDTRUTH_COLUMNS)
    ci = {c: i for i, c in enumerate(cols)}
    times = [_scale_time(r[ci["t"]], timestamp_unit) for r in rows]
    _check_monotone(times, path)
    out = []
    for rownum, (t, r) in enumerate(zip(times, rows), start=2):
        q = np.array([r[ci["qx"]], r[ci["qy"]], r[ci["qz"]], r[ci["qw"]]])
        nq = np.linalg.norm(q)
        if abs(nq - 1.0) > 1e-3:
            raise DataError(f"{path}: row {rownum}: quaternion norm {nq:.6f}")
        out.append(GroundTruthRecord(
            t=t,
            p=np.array([r[ci["px"]], r[ci["py"]], r[ci["pz"]]]),
            q=q / nq,
            v=np.array([r[ci["vx"]], r[ci["vy"]], r[ci["vz"]]]),
        ))
    return out


def load_fused_csv(path, timestamp_unit: str = "s") -> list[EstimateRecord]:
    cols, rows = _read_rows(path, FUSED_COLUMNS)
    ci = {c: i for i, c in enumerate(cols)}
    times = [_scale_time(r[ci["t"]], timestamp_unit) for r in rows]
    _check_monotone(times, path)
    out = []
    for t, r in zip(times, rows):
        q = np.array([r[ci["qx"]], r[ci["qy"]], r[ci["qz"]], r[ci["qw"]]])
        out.append(EstimateRecord(
            t=t,
            p=np.array([r[ci["px"]], r[ci["py"]], r[ci["pz"]]]),
            q=q / np.linalg.norm(q),
            v=np.array([r[ci["vx"]], r[ci["vy"]], r[ci["vz"]]]),
            iter_time=max(r[ci["iter_time_s"]], 0.0),
        ))
    return out


def synchronize(imu: list[ImuSample], kinematics, contacts) -> list[SensorFrame]:
    """Merge multi-rate streams into frames at the IMU timestamps.

    Kinematics and contacts are associated by zero-order hold (most recent
    record at or before the IMU time); IMU samples preceding the first
    kinematics record are dropped.
    """
    if not imu:
        raise DataError("empty IMU stream")
    frames = []
    ki = -1
    cj = -1
    for sample in imu:
        while ki + 1 < len(kinematics) and kinematics[ki + 1][0] <= sample.t:
            ki += 1
        while cj + 1 < len(contacts) and contacts[cj + 1][0] <= sample.t:
            cj += 1
        if ki < 0 or cj < 0:
            continue
        frames.append(SensorFrame(
            t=sample.t,
            imu=sample,
            feet=kinematics[ki][1],
            contacts=contacts[cj][1],
        ))
    return frames


def load_dataset(sensor_path, kinematics_path, groundtruth_path=None,
                 timestamp_unit: str = "s",
                 contact_force_threshold: float = 30.0):
    """Load and synchronize the three pipeline inputs.

    Returns (frames, groundtruth, report); groundtruth is [] when no path is
    given.
    """
    imu, contacts = load_sensor_csv(sensor_path, timestamp_unit,
                                    contact_force_threshold)
    kin = load_kinematics_csv(kinematics_path, timestamp_unit)
    gt = load_groundtruth_csv(groundtruth_path, timestamp_unit) \
        if groundtruth_path else []
    frames = synchronize(imu, kin, contacts) if imu else []
    report = LoadReport(
        sensor_rows=len(imu),
        kinematics_rows=len(kin),
        groundtruth_rows=len(gt),
        frames=len(frames),
        dropped_frames=len(imu) - len(frames),
    )
    return frames, gt, report


# ---------------------------------------------------------------------------
# writers

def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def write_sensor_csv(path, imu: list[ImuSample], contacts) -> None:
    has_mag = bool(imu) and imu[0].mag is not None
    cols = SENSOR_COLUMNS[:7] + (SENSOR_MAG_COLUMNS if has_mag else []) \
        + SENSOR_COLUMNS[7:]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for sample, (_, c) in zip(imu, contacts):
            row = [_fmt(sample.t)] + [_fmt(x) for x in sample.gyro] \
                + [_fmt(x) for x in sample.accel]
            if has_mag:
                row += [_fmt(x) for x in sample.mag]
            row += [str(int(f)) for f in c.flags]
            w.writerow(row)


def write_kinematics_csv(path, kinematics) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(KINEMATICS_COLUMNS)
        for t, feet in kinematics:
            by_name = {f.foot: f for f in feet}
            row = [_fmt(t)]
            for foot in FOOT_ORDER:
                f = by_name[foot]
                row += [_fmt(x) for x in f.fk] + [_fmt(x) for x in f.v_rel]
            w.writerow(row)


def write_groundtruth_csv(path, records: list[GroundTruthRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GROUNDTRUTH_COLUMNS)
        for r in records:
            w.writerow([_fmt(r.t)] + [_fmt(x) for x in r.p]
                       + [_fmt(x) for x in r.q] + [_fmt(x) for x in r.v])


def write_fused_csv(path, records: list[EstimateRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FUSED_COLUMNS)
        for r in records:
            w.writerow([_fmt(r.t)] + [_fmt(x) for x in r.p]
                       + [_fmt(x) for x in r.q] + [_fmt(x) for x in r.v]
                       + [_fmt(r.iter_time)])


def export_tum(records, path) -> None:
    """Write a trajectory in TUM format: `timestamp tx ty tz qx qy qz qw`."""
    with Path(path).open("w") as fh:
        for r in records:
            fields = [f"{r.t:.9f}"] + [_fmt(x) for x in r.p] + [_fmt(x) for x in r.q]
            fh.write(" ".join(fields) + "\n")


def load_tum(path) -> list[EstimateRecord]:
    """Parse a TUM trajectory; velocity is absent and left at zero."""
    path = Path(path)
    out = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataError(f"{path}: line {lineno}: expected 8 fields, "
                                f"got {len(parts)}")
            try:
                vals = [float(x) for x in parts]
            except ValueError:
                raise DataError(f"{path}: line {lineno}: unparseable number")
            q = np.array(vals[4:8])
            out.append(EstimateRecord(
                t=vals[0], p=np.array(vals[1:4]),
                q=q / np.linalg.norm(q), v=np.zeros(3),
            ))
    for i in range(1, len(out)):
        if out[i].t <= out[i - 1].t:
            raise DataError(f"{path}: non-increasing timestamp at entry {i + 1}")
    return out


def load_trajectory(path, timestamp_unit: str = "s"):
    """Load a trajectory file, auto-detecting fused/groundtruth CSV vs TUM.

    Returns (records, has_velocity).
    """
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    if "," in first:
        header = [h.strip() for h in first.split(",")]
        if "iter_time_s" in header:
            return load_fused_csv(path, timestamp_unit), True
        return load_groundtruth_csv(path, timestamp_unit), True
    return load_tum(path), False
