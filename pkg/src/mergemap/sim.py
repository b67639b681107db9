"""Synthetic planar worlds, trajectories, IMU streams and noisy LiDAR scans.

Everything random is driven by one 64-bit seed through ``numpy``'s
``SeedSequence``, so a seed pins a dataset bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import RigidTransform, euler_zyx_to_rot, rot_to_euler_zyx, so3_exp
from .noise import LidarNoiseSpec, tangent_bases
from .odometry import GRAVITY, ImuNoise, ImuSample

CLUTTER = -1
MISS_EPS = 1e-9


@dataclass(frozen=True)
class ScenePlane:
    """Plane ``normal · p + offset = 0`` clipped to an axis-aligned box."""

    normal: np.ndarray
    offset: float
    lo: np.ndarray
    hi: np.ndarray
    label: int

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))


@dataclass(frozen=True)
class Blob:
    """Clutter: a sphere of radius ``2*sigma`` whose hits are scattered by ``sigma``."""

    center: np.ndarray
    sigma: float


@dataclass(frozen=True)
class SceneSpec:
    planes: tuple
    clutter: tuple = ()

    def __post_init__(self):
        labels = [p.label for p in self.planes]
        if len(set(labels)) != len(labels):
            raise ValueError("plane labels must be unique")
        if any(lbl < 0 for lbl in labels):
            raise ValueError("plane labels must be non-negative")


def _axis_plane(axis: int, value: float, lo, hi, label: int, sign: float = 1.0) -> ScenePlane:
    n = np.zeros(3)
    n[axis] = sign
    return ScenePlane(n, -sign * value, lo, hi, label)


def floor_scene(x_range=(-2.5, 2.5), y_range=(-2.5, 2.5), z: float = -0.75) -> SceneSpec:
    """A single horizontal plane."""
    lo = [x_range[0], y_range[0], z - 1e-6]
    hi = [x_range[1], y_range[1], z + 1e-6]
    return SceneSpec((_axis_plane(2, z, lo, hi, 0),))


def corridor_scene(length: float = 40.0, margin: float = 2.0) -> SceneSpec:
    """Floor, ceiling and two walls along +x.

    Surfaces sit at voxel centers for a 0.5 m grid and stop short of each
    other, so no 0.5 m voxel sees two planes.
    """
    x0, x1 = -margin, length + margin
    floor_z, ceil_z, wall_y = -0.75, 1.75, 1.25
    planes = (
        _axis_plane(2, floor_z, [x0, -0.95, floor_z - 1e-6], [x1, 0.95, floor_z + 1e-6], 0),
        _axis_plane(2, ceil_z, [x0, -0.95, ceil_z - 1e-6], [x1, 0.95, ceil_z + 1e-6], 1, -1.0),
        _axis_plane(1, wall_y, [x0, wall_y - 1e-6, -0.45], [x1, wall_y + 1e-6, 1.45], 2, -1.0),
        _axis_plane(1, -wall_y, [x0, -wall_y - 1e-6, -0.45], [x1, -wall_y + 1e-6, 1.45], 3),
    )
    return SceneSpec(planes)


def box_scene(half_x: float = 12.25, half_y: float = 12.25, floor_z: float = -1.25,
              ceil_z: float = 3.75, gap: float = 0.3) -> SceneSpec:
    """Six inward-facing faces of a room, with gaps at the edges."""
    ix, iy = half_x - gap, half_y - gap
    zl, zh = floor_z + gap, ceil_z - gap
    e = 1e-6
    planes = (
        _axis_plane(2, floor_z, [-ix, -iy, floor_z - e], [ix, iy, floor_z + e], 0),
        _axis_plane(2, ceil_z, [-ix, -iy, ceil_z - e], [ix, iy, ceil_z + e], 1, -1.0),
        _axis_plane(0, half_x, [half_x - e, -iy, zl], [half_x + e, iy, zh], 2, -1.0),
        _axis_plane(0, -half_x, [-half_x - e, -iy, zl], [-half_x + e, iy, zh], 3),
        _axis_plane(1, half_y, [-ix, half_y - e, zl], [ix, half_y + e, zh], 4, -1.0),
        _axis_plane(1, -half_y, [-ix, -half_y - e, zl], [ix, -half_y + e, zh], 5),
    )
    return SceneSpec(planes)


def messy_scene(seed: int = 0, n_blobs: int = 40, **box_kw) -> SceneSpec:
    """Box room filled with clutter blobs standing in for vegetation."""
    base = box_scene(**box_kw)
    rng = np.random.default_rng(seed)
    blobs = tuple(Blob(np.array([rng.uniform(-9, 9), rng.uniform(-9, 9), rng.uniform(-0.5, 2.0)]),
                       float(rng.uniform(0.1, 0.3))) for _ in range(n_blobs))
    return SceneSpec(base.planes, blobs)


# -- ray patterns ---------------------------------------------------------

def spinning_pattern(n_rings: int = 16, n_azimuth: int = 900, elev_min_deg: float = -15.0,
                     elev_max_deg: float = 15.0, scan_index: int | None = None) -> np.ndarray:
    """Unit ray directions for a multi-beam spinning sensor, ``(rings*azimuth, 3)``.

    With ``scan_index`` the rings and azimuth columns are shifted by a
    low-discrepancy fraction of their spacing, so successive scans interleave
    instead of resampling the same lines.
    """
    el = np.deg2rad(np.linspace(elev_min_deg, elev_max_deg, n_rings))
    az = np.linspace(0.0, 2 * np.pi, n_azimuth, endpoint=False)
    if scan_index is not None and scan_index > 0:
        golden = (math.sqrt(5.0) - 1.0) / 2.0
        d_el = el[1] - el[0] if n_rings > 1 else 0.0
        el = el + d_el * (((scan_index * golden) % 1.0) - 0.5)
        az = az + (2 * np.pi / n_azimuth) * ((scan_index * math.sqrt(2.0)) % 1.0)
    E, A = np.meshgrid(el, az, indexing="ij")
    return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)


def rosette_pattern(n_points: int = 10000, fov_deg: float = 70.0, petals: int = 7,
                    scan_index: int = 0) -> np.ndarray:
    """Non-repetitive rosette over a forward cone; the pattern rotates every scan."""
    k = np.arange(n_points) + scan_index * n_points
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    theta = 2 * np.pi * ((k * golden) % 1.0)
    r = 0.5 * np.deg2rad(fov_deg) * np.abs(np.sin(petals * theta / 2.0 + 0.37 * scan_index))
    d = np.stack([np.cos(r), np.sin(r) * np.cos(theta), np.sin(r) * np.sin(theta)], axis=-1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


# -- ray casting ------------------------------------------------------------

@dataclass
class Hits:
    points: np.ndarray   # sensor frame
    ranges: np.ndarray
    labels: np.ndarray
    rays: np.ndarray


def cast_rays(scene: SceneSpec, pose: RigidTransform, directions, max_range: float = 100.0) -> Hits:
    """Nearest intersection of sensor-frame rays with the scene; misses are dropped."""
    d_s = np.asarray(directions, dtype=float).reshape(-1, 3)
    d_w = d_s @ pose.rot.T
    o = pose.trans
    best = np.full(d_s.shape[0], np.inf)
    label = np.full(d_s.shape[0], -2, dtype=np.int32)
    for pl in scene.planes:
        denom = d_w @ pl.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -(pl.normal @ o + pl.offset) / denom
        ok = (np.abs(denom) > MISS_EPS) & (t > MISS_EPS) & (t < best)
        if not ok.any():
            continue
        hit = o + np.where(ok, t, 0.0)[:, None] * d_w
        inside = np.all((hit >= pl.lo - 1e-9) & (hit <= pl.hi + 1e-9), axis=1)
        ok &= inside
        best[ok] = t[ok]
        label[ok] = pl.label
    for blob in scene.clutter:
        rad = 2.0 * blob.sigma
        oc = o - blob.center
        b = d_w @ oc
        c = oc @ oc - rad * rad
        disc = b * b - c
        ok = disc >= 0.0
        t = -b - np.sqrt(np.where(ok, disc, 0.0))
        ok &= (t > MISS_EPS) & (t < best)
        best[ok] = t[ok]
        label[ok] = CLUTTER
    keep = np.isfinite(best) & (best <= max_range)
    ranges = best[keep]
    return Hits(ranges[:, None] * d_s[keep], ranges, label[keep], d_s[keep])


# -- scans ----------------------------------------------------------------

@dataclass
class ScanFrame:
    t: float
    points: np.ndarray
    noise: LidarNoiseSpec = field(default_factory=LidarNoiseSpec)
    gt_pose: RigidTransform | None = None
    gt_labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.points.shape[0]


def perturb(hits: Hits, noise: LidarNoiseSpec, seed, t: float = 0.0, gt_pose=None,
            clutter_sigma: dict | None = None, min_range: float = 0.1) -> ScanFrame:
    """Apply range and bearing noise to noiseless hits.

    Range gets ``N(0, σ_d²)`` along the ray, bearing gets ``N(0, σ_ω²)`` in each
    tangent direction. Points are rounded to float32 so that frames survive
    the binary scan format unchanged.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m = hits.points.shape[0]
    dr = rng.normal(0.0, 1.0, m) * noise.sigma_range
    db = rng.normal(0.0, 1.0, (m, 2)) * noise.sigma_bearing
    if m == 0:
        pts = np.zeros((0, 3))
    elif noise.sigma_bearing == 0.0 and noise.sigma_range == 0.0:
        pts = hits.points.copy()
    else:
        omega = hits.points / hits.ranges[:, None]
        phi = np.einsum("nij,nj->ni", tangent_bases(omega), db)
        ang = np.linalg.norm(phi, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            axis = np.where(ang[:, None] > 0, phi / ang[:, None], 0.0)
        # Exp(φ)ω for φ ⟂ ω
        rotated = np.cos(ang)[:, None] * omega + np.sin(ang)[:, None] * np.cross(axis, omega)
        pts = (hits.ranges + dr)[:, None] * rotated
    if clutter_sigma:
        for lbl, sig in clutter_sigma.items():
            sel = hits.labels == lbl
            pts[sel] += rng.normal(0.0, sig, (int(sel.sum()), 3))
    keep = np.einsum("ni,ni->n", pts, pts) > min_range ** 2
    pts = pts[keep].astype(np.float32).astype(np.float64)
    return ScanFrame(t, pts, noise, gt_pose, hits.labels[keep].astype(np.int32))


# -- trajectories and IMU -------------------------------------------------

@dataclass
class TrajectorySpec:
    """Waypoints ``(t, RigidTransform)``; poses are C² cubic splines in
    position and in unwrapped ZYX Euler angles.

    ``end_condition`` is a ``scipy`` spline boundary type. The default
    ``"clamped"`` starts and ends at rest; ``"not-a-knot"`` reproduces
    polynomial motion of degree up to three exactly.
    """

    waypoints: list
    imu_rate: float = 200.0
    scan_rate: float = 10.0
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acc_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    end_condition: str = "clamped"

    def __post_init__(self):
        ts = [w[0] for w in self.waypoints]
        if len(ts) < 2 or np.any(np.diff(ts) <= 0):
            raise ValueError("waypoint times must be strictly increasing")


class Trajectory:
    def __init__(self, spec: TrajectorySpec):
        self.spec = spec
        ts = np.array([w[0] for w in spec.waypoints], dtype=float)
        pos = np.array([w[1].trans for w in spec.waypoints])
        eul = np.array([rot_to_euler_zyx(w[1].rot) for w in spec.waypoints])
        eul[:, 0] = np.unwrap(eul[:, 0])
        self.t0, self.t1 = float(ts[0]), float(ts[-1])
        self._pos = CubicSpline(ts, pos, bc_type=spec.end_condition)
        self._eul = CubicSpline(ts, eul, bc_type=spec.end_condition)

    def pose(self, t: float) -> RigidTransform:
        y, p, r = self._eul(t)
        return RigidTransform(euler_zyx_to_rot(y, p, r), self._pos(t))

    def velocity(self, t: float) -> np.ndarray:
        return self._pos(t, 1)

    def accel(self, t: float) -> np.ndarray:
        return self._pos(t, 2)

    def omega_body(self, t: float) -> np.ndarray:
        _, pitch, roll = self._eul(t)
        yd, pd, rd = self._eul(t, 1)
        sp, cp = math.sin(pitch), math.cos(pitch)
        sr, cr = math.sin(roll), math.cos(roll)
        return np.array([rd - yd * sp,
                         pd * cr + yd * cp * sr,
                         -pd * sr + yd * cp * cr])

    def times(self, rate: float) -> np.ndarray:
        n = int(math.floor((self.t1 - self.t0) * rate + 1e-9))
        return self.t0 + np.arange(n + 1) / rate


def gen_imu(traj: TrajectorySpec | Trajectory, seed, gravity=None) -> list[ImuSample]:
    """Ideal body rates and specific force plus white noise and constant biases."""
    tr = traj if isinstance(traj, Trajectory) else Trajectory(traj)
    spec = tr.spec
    g = np.array([0.0, 0.0, -GRAVITY]) if gravity is None else np.asarray(gravity, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    times = tr.times(spec.imu_rate)
    sg = spec.imu_noise.gyro * math.sqrt(spec.imu_rate)
    sa = spec.imu_noise.acc * math.sqrt(spec.imu_rate)
    ng = rng.normal(0.0, 1.0, (times.size, 3)) * sg
    na = rng.normal(0.0, 1.0, (times.size, 3)) * sa
    out = []
    for i, t in enumerate(times):
        R = tr.pose(t).rot
        gyro = tr.omega_body(t) + spec.gyro_bias + ng[i]
        acc = R.T @ (tr.accel(t) - g) + spec.acc_bias + na[i]
        out.append(ImuSample(float(t), gyro, acc))
    return out


def _arc_schedule(length: float, speed: float, hold: float, ramp: float, dt: float):
    """Waypoint times and arc lengths: rest for ``hold`` s, smooth ramp to
    ``speed``, cruise, smooth ramp back to rest at ``length``."""
    ramp = min(ramp, length / speed)
    cruise = length / speed - ramp
    T = 2 * ramp + cruise

    def arc(tau):
        if tau <= 0.0:
            return 0.0
        if tau < ramp:
            x = tau / ramp
            return speed * ramp * (x ** 3 - 0.5 * x ** 4)
        if tau <= ramp + cruise:
            return speed * (0.5 * ramp + tau - ramp)
        if tau < T:
            return length - arc(T - tau)
        return length

    ts = list(np.arange(0.0, hold, dt)) + list(hold + np.arange(0.0, T + 1e-9, dt))
    if ts[-1] < hold + T - 1e-9:
        ts.append(hold + T)
    return [(float(t), arc(t - hold)) for t in ts]


def circle_waypoints(radius: float = 4.0, speed: float = 2.5, hold: float = 1.5, laps: float = 2.0,
                     z: float = 0.0, dt: float = 0.1, ramp: float = 1.0, face_forward: bool = True) -> list:
    """Rest, then ``laps`` loops around the origin, ending at rest where it began."""
    out = []
    for t, s in _arc_schedule(2 * np.pi * radius * laps, speed, hold, ramp, dt):
        ang = s / radius
        yaw = ang + np.pi / 2 if face_forward else 0.0
        out.append((t, RigidTransform(euler_zyx_to_rot(yaw, 0.0, 0.0),
                                      [radius * math.cos(ang), radius * math.sin(ang), z])))
    return out


def corridor_waypoints(length: float = 40.0, speed: float = 2.0, hold: float = 1.5,
                       sway: float = 0.1, dt: float = 0.1, ramp: float = 1.0,
                       return_trip: bool = False) -> list:
    """Rest, then down the corridor along +x with gentle lateral and heading sway.

    With ``return_trip`` the sensor pauses at the far end and reverses back to
    its start, so the path closes.
    """
    sched = _arc_schedule(length, speed, hold, ramp, dt)
    if return_trip:
        t_end = sched[-1][0]
        back = _arc_schedule(length, speed, hold, ramp, dt)
        sched += [(t_end + t, length - s) for t, s in back if t > 0]
    out = []
    for t, s in sched:
        u = s / length
        y = sway * math.sin(2 * np.pi * u * 2)
        yaw = 0.05 * math.sin(2 * np.pi * u * 3)
        out.append((t, RigidTransform(euler_zyx_to_rot(yaw, 0.0, 0.0), [s, y, 0.0])))
    return out


@dataclass
class Dataset:
    scans: list
    imu: list
    groundtruth: list   # (t, RigidTransform) at scan times
    noise: LidarNoiseSpec


def simulate(scene: SceneSpec, traj_spec: TrajectorySpec, noise: LidarNoiseSpec = LidarNoiseSpec(),
             seed: int = 0, pattern: str = "spinning", pattern_kw: dict | None = None,
             max_range: float = 100.0, n_scans: int | None = None) -> Dataset:
    """Generate scans, IMU and ground truth for a scene and trajectory."""
    ss = np.random.SeedSequence(seed)
    imu_seed, scan_seed, clutter_seed = ss.spawn(3)
    tr = Trajectory(traj_spec)
    ratio = traj_spec.imu_rate / traj_spec.scan_rate
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("imu_rate must be an integer multiple of scan_rate")
    imu = gen_imu(tr, np.random.default_rng(imu_seed))
    scan_rng = np.random.default_rng(scan_seed)
    pattern_kw = dict(pattern_kw or {})
    if pattern not in ("spinning", "rosette"):
        raise ValueError(f"unknown ray pattern {pattern!r}")
    make = spinning_pattern if pattern == "spinning" else rosette_pattern
    clutter_sigma = {CLUTTER: min(b.sigma for b in scene.clutter)} if scene.clutter else None
    scans, gt = [], []
    times = tr.times(traj_spec.scan_rate)
    if n_scans is not None:
        times = times[:n_scans]
    for k, t in enumerate(times):
        pose = tr.pose(t)
        dirs = make(scan_index=k, **pattern_kw)
        hits = cast_rays(scene, pose, dirs, max_range)
        scans.append(perturb(hits, noise, scan_rng, float(t), pose, clutter_sigma))
        gt.append((float(t), pose))
    return Dataset(scans, imu, gt, noise)
