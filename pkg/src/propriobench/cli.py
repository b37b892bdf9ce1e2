"""Command-line pipeline: generate data, run estimators, evaluate, convert.

Subcommands mirror the offline benchmarking workflow: `gen` writes the three
input CSVs from the synthetic generator, `run` streams them through the
selected estimators with per-iteration timing, `eval` produces the metric
reports, and `convert` emits TUM trajectories.  Exit code 0 iff no errors;
diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datamodel as dm
from .config import ConfigError, RunConfig
from .liegroups import quat_from_axis_angle, quat_mul, quat_normalize
from .metrics import MetricReport, evaluate
from .synthgen import generate_dataset

ESTIMATORS = ("muse", "iekf", "smoother")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.set("run.seed", args.seed)
    if getattr(args, "estimator", None):
        cfg.set("run.estimator", args.estimator)
    if getattr(args, "window_size", None) is not None:
        cfg.set("smoother.window_size", args.window_size)
    if getattr(args, "init_roll_error", None) is not None:
        cfg.set("init.roll_error_deg", args.init_roll_error)
    return cfg


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    if args.profile:
        cfg.set("profile.kind", args.profile)
    if args.duration is not None:
        cfg.set("profile.duration", args.duration)
    if args.rate is not None:
        cfg.set("profile.rate", args.rate)
    if args.noiseless:
        for key in ("sigma_gyro", "sigma_accel", "sigma_gyro_bias",
                    "sigma_accel_bias", "sigma_contact", "sigma_kin"):
            cfg.set(f"noise.{key}", 0.0)
        for axis in ("x", "y", "z"):
            cfg.set(f"noise.gyro_bias0_{axis}", 0.0)
            cfg.set(f"noise.accel_bias0_{axis}", 0.0)
    if args.dump_config:
        print(cfg.dump(), end="")
        return 0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_dataset(cfg.motion_profile(), cfg.gait_spec(),
                               cfg.noise_spec())
    dm.write_sensor_csv(out / "sensor_data.csv", dataset.imu, dataset.contacts)
    dm.write_kinematics_csv(out / "feet_kinematics.csv", dataset.kinematics)
    dm.write_groundtruth_csv(out / "groundtruth.csv", dataset.groundtruth)
    manifest = {
        "profile": {k.split(".", 1)[1]: v for k, v in cfg.values.items()
                    if k.startswith("profile.")},
        "gait": {k.split(".", 1)[1]: v for k, v in cfg.values.items()
                 if k.startswith("gait.")},
        "noise": {k.split(".", 1)[1]: v for k, v in cfg.values.items()
                  if k.startswith("noise.")},
        "seed": cfg["run.seed"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    _log(f"gen: wrote {len(dataset.imu)} sensor rows to {out}")
    return 0


def _initial_state(cfg: RunConfig, gt):
    if cfg["init.from_groundtruth"] and gt:
        p0, v0, q0 = gt[0].p, gt[0].v, gt[0].q
    else:
        p0, v0, q0 = cfg.initial_state()
        p0, v0, q0 = np.asarray(p0), np.asarray(v0), np.asarray(q0)
    roll = np.radians(cfg["init.roll_error_deg"])
    if roll != 0.0:
        q0 = quat_normalize(quat_mul(q0, quat_from_axis_angle((roll, 0, 0))))
    return tuple(p0), tuple(v0), tuple(np.asarray(q0, dtype=float))


def cmd_run(args) -> int:
    cfg = _load_config(args)
    if args.dump_config:
        print(cfg.dump(), end="")
        return 0
    data = Path(args.data)
    gt_path = data / "groundtruth.csv"
    frames, gt, report = dm.load_dataset(
        data / "sensor_data.csv", data / "feet_kinematics.csv",
        gt_path if gt_path.exists() else None,
        timestamp_unit=cfg["io.timestamp_unit"],
        contact_force_threshold=cfg["io.contact_force_threshold"])
    _log(f"run: {report.sensor_rows} sensor rows, {report.frames} frames "
         f"({report.dropped_frames} dropped)")
    if not frames:
        _log("run: no frames to process")
        return 1
    p0, v0, q0 = _initial_state(cfg, gt)

    which = ESTIMATORS if cfg["run.estimator"] == "all" \
        else (cfg["run.estimator"],)
    out = Path(args.out)
    for name in which:
        est = cfg.make_estimator(name, p0, v0, q0)
        records = est.transform(frames)
        est_dir = out / name
        est_dir.mkdir(parents=True, exist_ok=True)
        dm.write_fused_csv(est_dir / "fused_state.csv", records)
        mean_ms = float(np.mean([r.iter_time for r in records])) * 1e3
        _log(f"run[{name}]: {len(records)} frames, "
             f"mean iteration {mean_ms:.4f} ms -> {est_dir / 'fused_state.csv'}")
    return 0


def _fmt_metric(value) -> str:
    return "absent" if value is None else f"{value:.6f}"


def render_table(reports: dict[str, MetricReport]) -> str:
    names = list(reports)
    rows = [("metric", *names)]
    for key, label in MetricReport.ROW_ORDER:
        rows.append((label, *[_fmt_metric(getattr(reports[n], key))
                              for n in names]))
    for key, label in (("timing_mean_s", "iter time mean [s]"),
                       ("timing_median_s", "iter time median [s]"),
                       ("timing_p99_s", "iter time p99 [s]")):
        rows.append((label, *[_fmt_metric(getattr(reports[n], key))
                              for n in names]))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    gt, _ = dm.load_trajectory(args.gt, cfg["io.timestamp_unit"])
    reports: dict[str, MetricReport] = {}
    for path in args.est:
        path = Path(path)
        name = path.parent.name if path.name == "fused_state.csv" else path.stem
        records, has_vel = dm.load_trajectory(path, cfg["io.timestamp_unit"])
        reports[name] = evaluate(records, gt, est_has_velocity=has_vel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {name: rep.as_dict() for name, rep in reports.items()}
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    with (out / "report.txt").open("w") as fh:
        for name, rep in reports.items():
            for key, value in rep.as_dict().items():
                fh.write(f"{name}.{key} = {_fmt_metric(value)}\n")
    print(render_table(reports))
    return 0


def cmd_convert(args) -> int:
    records, _ = dm.load_trajectory(args.input)
    dm.export_tum(records, args.out)
    _log(f"convert: wrote {len(records)} poses to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="propriobench",
        description="Proprioceptive state estimation benchmark pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="configuration file (dotted keys)")
        p.add_argument("--seed", type=int, help="RNG seed override")
        p.add_argument("--dump-config", action="store_true",
                       help="print the effective configuration and exit")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--profile", choices=("rest", "line", "circle", "figure8"))
    p.add_argument("--duration", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--noiseless", action="store_true",
                   help="zero all noise densities and initial biases")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run estimators over a dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--estimator", choices=ESTIMATORS + ("all",))
    p.add_argument("--window-size", type=int, help="smoother window size")
    p.add_argument("--init-roll-error", type=float, metavar="DEG",
                   help="initial roll error injected into the initial state")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate trajectories against ground truth")
    common(p)
    p.add_argument("--est", nargs="+", required=True,
                   help="estimated trajectory files (fused_state.csv or TUM)")
    p.add_argument("--gt", required=True, help="ground-truth trajectory file")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="convert a trajectory to TUM format")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, dm.SchemaError, dm.DataError) as exc:
        _log(f"error: {exc}")
        return 1
    except Exception as exc:  # estimator/metric failures with context
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
