"""Scan-sequential odometry and mapping: propagate, associate, update, insert, merge."""
from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats, kernels
from .config import PipelineConfig
from .merge import MergeConfig, merge_converged
from .noise import LidarNoiseSpec, PoseUncertainty, TooCloseError, sensor_covariances, world_covariances
from .odometry import (ImuNoise, ImuSample, NavState, associate, constant_velocity_predict,
                       estimate_gravity, iekf_update, imu_propagate, initial_state)
from .plane import PlaneFitConfig
from .voxel_map import VoxelMap, VoxelMapConfig, pack_keys

MIN_RANGE = 0.1


def downsample(points, leaf: float) -> np.ndarray:
    """Indices of one point per ``leaf``-sized grid cell (the first in scan order)."""
    n = len(points)
    if leaf <= 0 or n == 0:
        return np.arange(n)
    keys = pack_keys(kernels.voxel_keys(points, leaf))
    _, first = np.unique(keys, return_index=True)
    return np.sort(first)


class PipelineError(RuntimeError):
    """A module failed while processing one scan."""

    def __init__(self, scan_index: int, cause: BaseException):
        super().__init__(f"scan {scan_index}: {type(cause).__name__}: {cause}")
        self.scan_index = scan_index
        self.cause = cause


class NumericalFailure(ArithmeticError):
    pass


@dataclass
class PipelineResult:
    trajectory: list            # (t, RigidTransform)
    diagnostics: list = field(default_factory=list)
    map_stats: dict = field(default_factory=dict)
    vmap: VoxelMap | None = None


def _interp(a: ImuSample, b: ImuSample, t: float) -> ImuSample:
    w = (t - a.t) / (b.t - a.t)
    return ImuSample(t, (1 - w) * np.asarray(a.gyro) + w * np.asarray(b.gyro),
                     (1 - w) * np.asarray(a.acc) + w * np.asarray(b.acc))


class ImuBuffer:
    """Time-sorted IMU samples with window extraction and boundary interpolation."""

    def __init__(self, samples):
        self.samples = list(samples)
        self.times = np.array([s.t for s in self.samples])
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise formats.DataError("IMU timestamps are not strictly increasing")

    def window(self, t0: float, t1: float) -> list[ImuSample]:
        ts, ss = self.times, self.samples
        if ts.size == 0 or t1 <= t0:
            return []
        i0 = int(np.searchsorted(ts, t0, side="left"))
        i1 = int(np.searchsorted(ts, t1, side="right"))
        out = ss[i0:i1]
        if not out or out[0].t > t0:
            if 0 < i0 < ts.size:
                out = [_interp(ss[i0 - 1], ss[i0], t0)] + out
        if out and out[-1].t < t1 and i1 < ts.size and i1 > 0:
            out = out + [_interp(ss[i1 - 1], ss[i1], t1)]
        return out


class Odometry:
    """Stateful per-scan processor. Feed frames in time order via :meth:`process`."""

    def __init__(self, cfg: PipelineConfig, imu=(), noise: LidarNoiseSpec | None = None):
        self.cfg = cfg
        fit = PlaneFitConfig(min_fit_points=cfg.map.min_fit_points,
                             planarity_ratio=cfg.map.planarity_ratio,
                             planarity_abs=cfg.map.planarity_abs)
        self.vmap = VoxelMap(VoxelMapConfig(cfg.map.voxel_size, cfg.map.max_points, fit))
        self.merge_cfg = MergeConfig(cfg.merge.chi2_threshold, cfg.merge.neighbor_set,
                                     cfg.merge.require_same_axis)
        f = cfg.filter
        self.imu_noise = ImuNoise(f.gyro_noise, f.acc_noise, f.gyro_bias_walk, f.acc_bias_walk)
        self.inertial = f.mode == "lidar_inertial"
        self.imu = ImuBuffer(imu)
        if self.inertial and len(self.imu.samples) < 2:
            raise formats.DataError("lidar_inertial mode needs an IMU stream")
        self.noise_override = noise
        self.state: NavState | None = None
        self.prev: NavState | None = None
        self.t_prev: float | None = None
        self.dt_prev = 0.0
        self.index = 0

    def _noise(self, frame) -> LidarNoiseSpec:
        if self.noise_override is not None:
            return self.noise_override
        n = self.cfg.noise
        base = frame.noise or LidarNoiseSpec()
        sr = n.sigma_range if n.sigma_range >= 0 else base.sigma_range
        sb = np.deg2rad(n.sigma_bearing_deg) if n.sigma_bearing_deg >= 0 else base.sigma_bearing
        return LidarNoiseSpec(sr, float(sb))

    def _init_state(self) -> NavState:
        f = self.cfg.filter
        g = estimate_gravity(self.imu.samples, window=f.gravity_window) if self.inertial else None
        return initial_state(None, g, f.init_pose_std, f.init_vel_std, f.init_bias_gyro_std,
                             f.init_bias_acc_std, f.init_gravity_std)

    def _predict(self, t: float) -> NavState:
        dt = t - self.t_prev
        if not dt > 0:
            raise formats.DataError(f"scan timestamps not increasing at t={t}")
        if self.inertial:
            return imu_propagate(self.state, self.imu.window(self.t_prev, t), self.imu_noise)
        f = self.cfg.filter
        prev = self.prev if self.prev is not None else self.state
        return constant_velocity_predict(self.state, prev, self.dt_prev, dt, f.cv_rot_std, f.cv_trans_std)

    def process(self, frame) -> dict:
        k = self.index
        try:
            return self._process(frame)
        except formats.DataError:
            raise
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(k, exc) from exc
        finally:
            self.index += 1

    def _process(self, frame) -> dict:
        t0 = time.perf_counter()
        pts = np.asarray(frame.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise formats.DataError(f"scan {self.index}: non-finite coordinates")
        pts = pts[np.einsum("ni,ni->n", pts, pts) > MIN_RANGE ** 2]
        covs = sensor_covariances(pts, self._noise(frame))
        d = {"scan": self.index, "t": float(frame.t), "points": int(pts.shape[0]),
             "matches": 0, "iterations": 0, "cost_before": None, "cost_after": None}
        f = self.cfg.filter
        if self.state is None:
            state = self._init_state()
        else:
            prior = self._predict(frame.t)
            sel = downsample(pts, f.downsample)
            ms = associate(self.vmap, pts[sel], covs[sel], prior, f.gate_sigma)
            info: dict = {}
            state = iekf_update(prior, ms, f.max_iters, f.tol, info, f.shared_plane_noise)
            if info.get("aborted") or not np.all(np.isfinite(state.cov)):
                raise NumericalFailure("non-finite residuals or covariance in update")
            d["matches"] = info["matches"]
            d["iterations"] = info["iterations"]
            if info["costs"]:
                d["cost_before"] = info["costs"][0]
                d["cost_after"] = info["costs"][-1]
            self.dt_prev = frame.t - self.t_prev
        pu = PoseUncertainty.from_state_cov(state.cov)
        pw, cw = world_covariances(pts, covs, state.pose, pu)
        new = self.vmap.insert_scan(pw, cw)
        d["converged"] = len(new)
        if self.cfg.merge.enabled and new:
            rep = merge_converged(self.vmap, new, self.merge_cfg)
            d["merged"] = rep.pairs_merged
        else:
            d["merged"] = 0
        self.prev, self.state, self.t_prev = self.state, state, float(frame.t)
        d["wall_ms"] = 1e3 * (time.perf_counter() - t0)
        return d


def run_scans(frames, imu, cfg: PipelineConfig, noise: LidarNoiseSpec | None = None) -> PipelineResult:
    """Run the pipeline over in-memory (or streamed) frames."""
    odo = Odometry(cfg, imu, noise)
    traj, diags = [], []
    for frame in frames:
        diags.append(odo.process(frame))
        traj.append((float(frame.t), odo.state.pose))
    return PipelineResult(traj, diags, odo.vmap.stats(), odo.vmap)


_DONE = object()


def _read_ahead(it):
    """Yield from ``it`` with one item read ahead on a worker thread."""
    q: queue.Queue = queue.Queue(maxsize=1)

    def work():
        try:
            for item in it:
                q.put(item)
        except BaseException as exc:  # handed to the consumer
            q.put(exc)
            return
        q.put(_DONE)

    th = threading.Thread(target=work, daemon=True)
    th.start()
    while True:
        item = q.get()
        if item is _DONE:
            break
        if isinstance(item, BaseException):
            raise item
        yield item
    th.join()


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Run on the files named in ``cfg.io`` and write outputs to ``cfg.io.output_dir``.

    Outputs: ``trajectory.txt``, ``diagnostics.jsonl`` (one record per scan) and
    ``map_stats.json``.
    """
    if not cfg.io.scans:
        raise formats.DataError("no scan file configured (io.scans)")
    imu = formats.load_imu(cfg.io.imu) if cfg.io.imu else []
    frames = _read_ahead(formats.load_scans(cfg.io.scans))
    res = run_scans(frames, imu, cfg)
    out = Path(cfg.io.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_trajectory(out / "trajectory.txt", res.trajectory)
    with open(out / "diagnostics.jsonl", "w") as fh:
        for d in res.diagnostics:
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    with open(out / "map_stats.json", "w") as fh:
        json.dump(res.map_stats, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return res


__all__ = ["PipelineError", "NumericalFailure", "PipelineResult", "ImuBuffer", "Odometry",
           "run_scans", "run_pipeline", "TooCloseError"]
