"""Command-line entry point: ``mergemap {simulate,run,eval,bench}``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import formats, kernels
from .config import ConfigError, load_config
from .evaluate import EvaluationError, compute_ate, end_to_end_error, path_length
from .noise import LidarNoiseSpec
from .odometry import ImuNoise
from .pipeline import NumericalFailure, PipelineError, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

SCENES = ("box", "corridor", "floor", "messy")
PATHS = ("circle", "corridor")


def _scene(name: str):
    from . import sim
    return {"box": lambda: sim.box_scene(6.25, 6.25, -1.25, 2.75),
            "corridor": sim.corridor_scene,
            "floor": lambda: sim.floor_scene((-20.0, 20.0), (-20.0, 20.0), -1.25),
            "messy": lambda: sim.messy_scene(half_x=6.25, half_y=6.25, floor_z=-1.25, ceil_z=2.75)}[name]()


def cmd_simulate(a) -> int:
    from . import sim
    path = a.path or ("corridor" if a.scene == "corridor" else "circle")
    wp = sim.corridor_waypoints() if path == "corridor" else sim.circle_waypoints()
    s = a.imu_noise_scale
    spec = sim.TrajectorySpec(wp, imu_rate=a.imu_rate, scan_rate=a.scan_rate,
                              imu_noise=ImuNoise(1e-3 * s, 1e-2 * s, 1e-5 * s, 1e-4 * s))
    noise = LidarNoiseSpec(a.sigma_range, float(np.deg2rad(a.sigma_bearing_deg)))
    kw = (dict(n_rings=a.rings, n_azimuth=a.azimuth, elev_min_deg=-a.fov_v / 2, elev_max_deg=a.fov_v / 2)
          if a.pattern == "spinning" else dict(n_points=a.rings * a.azimuth))
    ds = sim.simulate(_scene(a.scene), spec, noise, seed=a.seed, pattern=a.pattern,
                      pattern_kw=kw, n_scans=a.n_scans)
    paths = formats.write_dataset(a.out, ds)
    cfg = load_config(overrides=[f"io.scans={paths['scans'].name}", f"io.imu={paths['imu'].name}",
                                 "io.output_dir=run",
                                 f"filter.gyro_noise={spec.imu_noise.gyro!r}",
                                 f"filter.acc_noise={spec.imu_noise.acc!r}",
                                 f"filter.gyro_bias_walk={spec.imu_noise.gyro_bias_walk!r}",
                                 f"filter.acc_bias_walk={spec.imu_noise.acc_bias_walk!r}"])
    (Path(a.out) / "config.ini").write_text(cfg.to_ini())
    print(f"wrote {len(ds.scans)} scans, {len(ds.imu)} IMU samples to {a.out}")
    return EXIT_OK


def _config(a):
    over = list(a.set or [])
    for key, val in (("io.scans", a.scans), ("io.imu", a.imu), ("io.output_dir", a.out)):
        if val is not None:
            over.append(f"{key}={val}")
    if a.mode:
        over.append(f"filter.mode={a.mode}")
    if a.merging:
        over.append(f"merge.enabled={a.merging}")
    cfg = load_config(a.config, over)
    if a.config and a.out is None:
        cfg.io.output_dir = str(Path(a.config).parent / cfg.io.output_dir)
    return cfg


def cmd_run(a) -> int:
    cfg = _config(a)
    if a.dump_effective_config:
        sys.stdout.write(cfg.to_ini())
        return EXIT_OK
    res = run_pipeline(cfg)
    print(f"processed {len(res.trajectory)} scans; roots={res.map_stats['roots']} "
          f"plane_bytes={res.map_stats['plane_bytes']}; outputs in {cfg.io.output_dir}")
    return EXIT_OK


def cmd_eval(a) -> int:
    est = formats.load_trajectory(a.est)
    out = {"poses": len(est), "end_to_end": end_to_end_error(est), "path_length": path_length(est)}
    if a.gt:
        gt = formats.load_trajectory(a.gt)
        out["ate"] = compute_ate(est, gt, align=not a.no_align)
        out["aligned"] = not a.no_align
    if a.json:
        print(json.dumps(out, sort_keys=True))
    else:
        for k, v in out.items():
            print(f"{k}: {v:.6f}" if isinstance(v, float) else f"{k}: {v}")
    return EXIT_OK


def cmd_bench(a) -> int:
    cfg = _config(a)
    t0 = time.perf_counter()
    res = run_pipeline(cfg)
    wall = time.perf_counter() - t0
    ms = np.array([d["wall_ms"] for d in res.diagnostics])
    pts = np.array([d["points"] for d in res.diagnostics])
    report = {
        "backend": kernels.BACKEND,
        "scans": len(ms),
        "wall_s": wall,
        "scan_ms_mean": float(ms.mean()) if ms.size else 0.0,
        "scan_ms_p95": float(np.percentile(ms, 95)) if ms.size else 0.0,
        "ms_per_10k_points": float(1e4 * ms.sum() / max(pts.sum(), 1)),
        "map": res.map_stats,
    }
    text = json.dumps(report, sort_keys=True, indent=2)
    Path(cfg.io.output_dir).mkdir(parents=True, exist_ok=True)
    (Path(cfg.io.output_dir) / "bench.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def _run_args(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--scans")
    p.add_argument("--imu")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=("lidar_only", "lidar_inertial"))
    p.add_argument("--merging", choices=("on", "off"))
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mergemap", description="Plane-merging voxel map LiDAR(-inertial) odometry")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--scene", choices=SCENES, default="box")
    p.add_argument("--path", choices=PATHS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--scan-rate", type=float, default=5.0)
    p.add_argument("--imu-rate", type=float, default=200.0)
    p.add_argument("--imu-noise-scale", type=float, default=1.0)
    p.add_argument("--sigma-range", type=float, default=0.02)
    p.add_argument("--sigma-bearing-deg", type=float, default=0.05)
    p.add_argument("--pattern", choices=("spinning", "rosette"), default="spinning")
    p.add_argument("--rings", type=int, default=24)
    p.add_argument("--azimuth", type=int, default=1000)
    p.add_argument("--fov-v", type=float, default=60.0, help="vertical field of view, degrees")
    p.add_argument("--n-scans", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run odometry and mapping on a dataset")
    _run_args(p)
    p.add_argument("--dump-effective-config", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="trajectory errors")
    p.add_argument("--est", required=True)
    p.add_argument("--gt")
    p.add_argument("--no-align", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="timed run with a resource report")
    _run_args(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (formats.DataError, EvaluationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PipelineError as exc:
        numeric = isinstance(exc.cause, (ArithmeticError, np.linalg.LinAlgError))
        print(f"{'numerical failure' if numeric else 'error'}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if numeric else EXIT_DATA
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
