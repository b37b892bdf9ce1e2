"""Run configuration: one flat dotted-key text file covering every default.

Format: `section.key = value` per line, `#` comments; values are parsed
against the default's type (bool/int/float/str).  `dump()` prints the full
effective configuration, so `--dump-config` documents every knob.
"""

from __future__ import annotations

from pathlib import Path

from .iekf import IekfEstimator
from .muse import MuseEstimator
from .smoother import SmootherEstimator
from .synthgen import GaitSpec, MotionProfile, NoiseSpec

DEFAULTS = {
    # pipeline
    "run.estimator": "all",          # muse | iekf | smoother | all
    "run.seed": 0,
    "io.timestamp_unit": "s",        # s | ns (integer nanoseconds input)
    "io.contact_force_threshold": 30.0,
    # synthetic data generation
    "profile.kind": "circle",        # rest | line | circle | figure8
    "profile.speed": 0.5,
    "profile.radius": 2.0,
    "profile.yaw_rate": 0.3,
    "profile.duration": 60.0,
    "profile.rate": 400.0,
    "gait.period": 0.7,
    "gait.duty": 0.6,
    "gait.step_height": 0.05,
    # shared noise densities (white per sqrt(Hz), walks per sqrt(s))
    "noise.sigma_gyro": 2e-3,
    "noise.sigma_accel": 1e-2,
    "noise.sigma_gyro_bias": 2e-5,
    "noise.sigma_accel_bias": 1e-4,
    "noise.sigma_contact": 1e-3,
    "noise.sigma_kin": 2e-3,
    "noise.sigma_mag": 0.01,
    "noise.gyro_bias0_x": 0.002,
    "noise.gyro_bias0_y": -0.001,
    "noise.gyro_bias0_z": 0.0005,
    "noise.accel_bias0_x": 0.02,
    "noise.accel_bias0_y": -0.01,
    "noise.accel_bias0_z": 0.015,
    # MUSE gains and fusion tuning
    "muse.k1": 1.0,
    "muse.k2": 0.5,
    "muse.kb": 0.1,
    "muse.r_meas_std": 0.01,
    "muse.accel_gate": 0.5,
    "muse.process_accel_floor": 0.02,
    "muse.centripetal_compensation": True,
    # IEKF
    "iekf.gating": True,
    "iekf.contact_inflation_std": 0.03,
    # invariant smoother
    "smoother.window_size": 3,
    "smoother.max_iterations": 5,
    "smoother.tolerance": 1e-6,
    "smoother.sigma_contact_swing": 1.0,
    "smoother.sigma_pos_floor": 1e-4,
    # initial state and covariances
    "init.from_groundtruth": True,
    "init.px": 0.0,
    "init.py": 0.0,
    "init.pz": 0.0,
    "init.vx": 0.0,
    "init.vy": 0.0,
    "init.vz": 0.0,
    "init.qx": 0.0,
    "init.qy": 0.0,
    "init.qz": 0.0,
    "init.qw": 1.0,
    "init.roll_error_deg": 0.0,
    "init.att_std": 0.1,
    "init.vel_std": 0.1,
    "init.pos_std": 0.1,
    "init.contact_std": 0.1,
    "init.bias_gyro_std": 0.01,
    "init.bias_accel_std": 0.1,
}


class ConfigError(ValueError):
    pass


class RunConfig:
    """Flat key-value configuration with typed defaults."""

    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        if values:
            for key, val in values.items():
                self.set(key, val)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        default = DEFAULTS[key]
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes", "on"):
                    value = True
                elif value.lower() in ("false", "0", "no", "off"):
                    value = False
                else:
                    raise ConfigError(f"{key}: expected a boolean, got {value!r}")
            value = bool(value)
        elif isinstance(default, int) and not isinstance(default, bool):
            try:
                value = int(str(value))
            except ValueError:
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
        elif isinstance(default, float):
            try:
                value = float(str(value))
            except ValueError:
                raise ConfigError(f"{key}: expected a number, got {value!r}")
        else:
            value = str(value)
        self.values[key] = value

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def load(cls, path) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            try:
                cfg.set(key.strip(), val.strip())
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}")
        return cfg

    def dump(self) -> str:
        lines = ["# propriobench configuration (all keys at effective values)"]
        section = None
        for key in sorted(self.values):
            sec = key.split(".", 1)[0]
            if sec != section:
                lines.append("")
                section = sec
            val = self.values[key]
            if isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"

    # -- factories ----------------------------------------------------------

    def noise_spec(self) -> NoiseSpec:
        v = self.values
        return NoiseSpec(
            sigma_gyro=v["noise.sigma_gyro"],
            sigma_accel=v["noise.sigma_accel"],
            sigma_gyro_bias=v["noise.sigma_gyro_bias"],
            sigma_accel_bias=v["noise.sigma_accel_bias"],
            sigma_contact=v["noise.sigma_contact"],
            sigma_kin=v["noise.sigma_kin"],
            sigma_mag=v["noise.sigma_mag"],
            gyro_bias0=(v["noise.gyro_bias0_x"], v["noise.gyro_bias0_y"],
                        v["noise.gyro_bias0_z"]),
            accel_bias0=(v["noise.accel_bias0_x"], v["noise.accel_bias0_y"],
                         v["noise.accel_bias0_z"]),
            seed=v["run.seed"],
        )

    def motion_profile(self) -> MotionProfile:
        v = self.values
        return MotionProfile(kind=v["profile.kind"], speed=v["profile.speed"],
                             radius=v["profile.radius"],
                             yaw_rate=v["profile.yaw_rate"],
                             duration=v["profile.duration"],
                             rate=v["profile.rate"])

    def gait_spec(self) -> GaitSpec:
        v = self.values
        return GaitSpec(period=v["gait.period"], duty=v["gait.duty"],
                        step_height=v["gait.step_height"])

    def initial_state(self):
        v = self.values
        return (
            (v["init.px"], v["init.py"], v["init.pz"]),
            (v["init.vx"], v["init.vy"], v["init.vz"]),
            (v["init.qx"], v["init.qy"], v["init.qz"], v["init.qw"]),
        )

    def make_estimator(self, name: str, init_position, init_velocity,
                       init_quaternion):
        v = self.values
        noise = self.noise_spec()
        common = dict(init_position=tuple(init_position),
                      init_velocity=tuple(init_velocity),
                      init_quaternion=tuple(init_quaternion))
        if name == "muse":
            return MuseEstimator(
                k1=v["muse.k1"], k2=v["muse.k2"], kb=v["muse.kb"],
                noise=noise, r_meas_std=v["muse.r_meas_std"],
                accel_gate=v["muse.accel_gate"],
                process_accel_floor=v["muse.process_accel_floor"],
                centripetal_compensation=v["muse.centripetal_compensation"],
                init_att_std=v["init.att_std"],
                init_bias_std=v["init.bias_gyro_std"],
                init_pos_std=v["init.pos_std"], init_vel_std=v["init.vel_std"],
                **common)
        if name == "iekf":
            return IekfEstimator(
                noise=noise, gating=v["iekf.gating"],
                contact_inflation_std=v["iekf.contact_inflation_std"],
                init_att_std=v["init.att_std"], init_vel_std=v["init.vel_std"],
                init_pos_std=v["init.pos_std"],
                init_bias_gyro_std=v["init.bias_gyro_std"],
                init_bias_accel_std=v["init.bias_accel_std"],
                **common)
        if name == "smoother":
            return SmootherEstimator(
                window_size=v["smoother.window_size"], noise=noise,
                max_iterations=v["smoother.max_iterations"],
                tolerance=v["smoother.tolerance"],
                sigma_contact_swing=v["smoother.sigma_contact_swing"],
                sigma_pos_floor=v["smoother.sigma_pos_floor"],
                init_att_std=v["init.att_std"], init_vel_std=v["init.vel_std"],
                init_pos_std=v["init.pos_std"],
                init_contact_std=v["init.contact_std"],
                init_bias_gyro_std=v["init.bias_gyro_std"],
                init_bias_accel_std=v["init.bias_accel_std"],
                **common)
        raise ConfigError(f"unknown estimator {name!r}")
