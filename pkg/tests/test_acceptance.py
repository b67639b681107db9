"""Acceptance suite. Each check records one PASS/FAIL line, echoed at the end of the run."""
import time

import numpy as np
import pytest

from mergemap import pipeline as pl
from mergemap.config import PipelineConfig
from mergemap.evaluate import compute_ate, end_to_end_error, path_length
from mergemap.geometry import so3_exp
from mergemap.merge import CHI2_3DOF_95, fuse, mahalanobis
from mergemap.noise import LidarNoiseSpec, decompose, point_cov_sensor
from mergemap.odometry import DIM, MatchSet, NavState, initial_state, iekf_update, match_terms
from mergemap.plane import FitAccumulator, MainAxis, PlaneFit, accumulate, fit_plane, plane_jacobians, solve_plane
from mergemap.sim import (TrajectorySpec, box_scene, circle_waypoints, corridor_scene,
                          corridor_waypoints, simulate)

import test_plane_merge as tpm
from maphelpers import corridor_map, floor_map, synthetic_map, z_plane
from test_odometry import _match
from test_plane_fit import lstsq_oracle, planar_points

RESULTS: list[str] = []


def report(num, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


# Simulator runs shared by the odometry criteria. Every update's objective
# history is captured for the monotonicity check.
_COSTS: list[list[float]] = []


@pytest.fixture(autouse=True, scope="module")
def _capture_costs():
    real = pl.iekf_update

    def wrapped(prior, ms, max_iters, tol, info, shared):
        out = real(prior, ms, max_iters, tol, info, shared)
        _COSTS.append(list(info["costs"]))
        return out

    pl.iekf_update = wrapped
    yield
    pl.iekf_update = real


_RUNS = {}


def _run(ds, merge, downsample=0.3):
    cfg = PipelineConfig()
    cfg.merge.enabled = merge
    cfg.filter.downsample = downsample
    return pl.run_scans(ds.scans, ds.imu, cfg)


def box_run():
    if "box" not in _RUNS:
        ds = simulate(box_scene(6.25, 6.25, -1.25, 2.75),
                      TrajectorySpec(circle_waypoints(), imu_rate=200, scan_rate=5), seed=1,
                      pattern_kw=dict(n_rings=24, n_azimuth=1000, elev_min_deg=-30, elev_max_deg=30))
        _RUNS["box"] = (ds, _run(ds, True))
    return _RUNS["box"]


def corridor_runs():
    if "corridor" not in _RUNS:
        out = []
        for seed in range(5):
            ds = simulate(corridor_scene(),
                          TrajectorySpec(corridor_waypoints(), imu_rate=200, scan_rate=5), seed=seed,
                          pattern_kw=dict(n_rings=16, n_azimuth=600, elev_min_deg=-30, elev_max_deg=30))
            off = compute_ate(_run(ds, False).trajectory, ds.groundtruth)
            on = compute_ate(_run(ds, True).trajectory, ds.groundtruth)
            out.append((off, on))
        _RUNS["corridor"] = np.array(out)
    return _RUNS["corridor"]


def test_c01_plane_fit_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_fit = worst_order = 0.0
    for _ in range(200):
        ax = MainAxis(int(rng.integers(3)))
        n = int(rng.integers(3, 51))
        pts, _ = planar_points(rng, ax, n, noise=0.01)
        batch = FitAccumulator(ax)
        batch.add_batch(pts)
        ref = lstsq_oracle(pts, ax)
        worst_fit = max(worst_fit, np.max(np.abs(solve_plane(batch) - ref) / np.maximum(1.0, np.abs(ref))))
        inc = FitAccumulator(ax)
        for i in rng.permutation(n):
            inc = accumulate(inc, pts[i])
        worst_order = max(worst_order, np.max(np.abs(solve_plane(inc) - solve_plane(batch))))
    dt = time.perf_counter() - t0
    ok = worst_fit < 1e-9 and worst_order < 1e-12 and dt < 1.0
    report(1, "plane fit vs least squares", ok,
           f"oracle err {worst_fit:.1e}, order err {worst_order:.1e}, {dt:.2f} s")


def test_c02_plane_covariance():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for ax in MainAxis:
        origin = rng.uniform(-5, 5, 3)
        pts, _ = planar_points(rng, ax, 25, noise=0.02, center=origin)
        acc = FitAccumulator(ax, origin=origin)
        acc.add_batch(pts)
        J = plane_jacobians(pts, acc, solve_plane(acc))
        eps = 1e-6
        for i in range(25):
            for k in range(3):
                up, dn = pts.copy(), pts.copy()
                up[i, k] += eps
                dn[i, k] -= eps
                fu, fd = FitAccumulator(ax, origin), FitAccumulator(ax, origin)
                fu.add_batch(up)
                fd.add_batch(dn)
                num = (solve_plane(fu) - solve_plane(fd)) / (2 * eps)
                worst = max(worst, np.linalg.norm(J[i, :, k] - num) / max(np.linalg.norm(num), 1e-12))
    clean, n_true = planar_points(rng, MainAxis.Z, 40, coeff=(0.1, -0.2, 0.5))
    sig = 0.01
    covs = np.broadcast_to(np.eye(3) * sig ** 2, (40, 3, 3))
    nees = []
    for _ in range(2000):
        fit = fit_plane(clean + rng.normal(0, sig, clean.shape), covs, axis=MainAxis.Z)
        e = fit.n - n_true
        nees.append(e @ np.linalg.solve(fit.cov, e))
    dt = time.perf_counter() - t0
    m = float(np.mean(nees))
    ok = worst < 1e-4 and 2.7 <= m <= 3.3 and dt < 30
    report(2, "plane covariance", ok, f"FD rel err {worst:.1e}, NEES mean {m:.3f}, {dt:.1f} s")


def _rodrigues(phi):
    th = np.linalg.norm(phi, axis=1, keepdims=True)
    k = phi / np.where(th > 0, th, 1.0)
    return th, k


def test_c03_noise_model_monte_carlo():
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    worst = 0.0
    n = 1_000_000
    for _ in range(20):
        nz = LidarNoiseSpec(rng.uniform(0.005, 0.1), np.deg2rad(rng.uniform(0.02, 0.5)))
        p = rng.normal(size=3)
        p *= rng.uniform(1.0, 60.0) / np.linalg.norm(p)
        dec = decompose(p)
        w0 = p / np.linalg.norm(p)
        # bearing noise as a rotation about two axes orthogonal to the ray, applied exactly
        e1 = np.cross(w0, [1.0, 0, 0] if abs(w0[0]) < 0.9 else [0, 1.0, 0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(w0, e1)
        phi = rng.normal(0, nz.sigma_bearing, (n, 1)) * e1 + rng.normal(0, nz.sigma_bearing, (n, 1)) * e2
        th, k = _rodrigues(phi)
        w = w0 * np.cos(th) + np.cross(k, w0) * np.sin(th) + k * (k @ w0)[:, None] * (1 - np.cos(th))
        samples = (np.linalg.norm(p) + rng.normal(0, nz.sigma_range, (n, 1))) * w
        C = np.cov(samples.T)
        A = point_cov_sensor(dec, nz)
        scale = np.sqrt(np.outer(np.diag(A), np.diag(A)))
        worst = max(worst, float(np.max(np.abs(C - A) / scale)))
    dt = time.perf_counter() - t0
    report(3, "sensor noise covariance", worst < 0.02 and dt < 30,
           f"max rel err {worst * 100:.2f}%, {dt:.1f} s")


def test_c04_fusion_identities():
    rng = np.random.default_rng(404)
    worst = 0.0
    below = True
    for _ in range(10_000):
        c1, c2 = tpm.random_psd(rng, rng.uniform(0.01, 2)), tpm.random_psd(rng, rng.uniform(0.01, 2))
        p1 = PlaneFit(rng.normal(size=3), MainAxis.Z, c1, 10)
        p2 = PlaneFit(rng.normal(size=3), MainAxis.Z, c2, 10)
        t1, t2 = np.trace(c1), np.trace(c2)
        tf = np.trace(fuse(p1, p2).cov)
        worst = max(worst, abs(tf - t1 * t2 / (t1 + t2)) / (t1 * t2 / (t1 + t2)))
        below &= tf < min(t1, t2)
    c = tpm.random_psd(rng)
    p1 = PlaneFit(rng.normal(size=3), MainAxis.Z, c, 10)
    p2 = PlaneFit(rng.normal(size=3), MainAxis.Z, c.copy(), 10)
    mid = np.array_equal(fuse(p1, p2).n, 0.5 * (p1.n + p2.n))
    report(4, "fusion identities", worst < 1e-12 and below and mid,
           f"trace rel err {worst:.1e}, strictly tighter {below}, exact midpoint {mid}")


def test_c05_union_find_contract():
    t0 = time.perf_counter()
    ok = True
    try:
        tpm.test_union_find_contract_over_random_sequences()
    except AssertionError:
        ok = False
    report(5, "union-find contract", ok, f"10000 sequences, {time.perf_counter() - t0:.1f} s")


def test_c06_merge_ground_truth():
    t0 = time.perf_counter()
    floor = floor_map()
    cor = corridor_map()
    rng = np.random.default_rng(606)
    gammas = []
    for _ in range(200):
        a, b = z_plane(-0.1, rng=rng), z_plane(-1.1, rng=rng)
        gammas.append(mahalanobis(a, b))
    vm = synthetic_map([(0, 0, 0), (1, 0, 0)], [z_plane(-0.1), z_plane(-1.1)])
    tpm.merge_converged(vm, [(0, 0, 0), (1, 0, 0)])
    dt = time.perf_counter() - t0
    n_floor, n_cor = len(floor.roots()), len(cor.roots())
    g = min(gammas)
    ok = (floor.stats()["cells"] == 100 and n_floor == 1 and n_cor == 4 and len(vm.roots()) == 2
          and g > 100 * CHI2_3DOF_95 and dt < 10)
    report(6, "merge ground truth", ok,
           f"floor roots {n_floor}, corridor roots {n_cor}, min offset gamma {g:.0f}, {dt:.1f} s")


def test_c07_box_odometry():
    ds, res = box_run()
    ate = compute_ate(res.trajectory, ds.groundtruth)
    e2e = end_to_end_error(res.trajectory)
    length = path_length(ds.groundtruth)
    ok = len(ds.scans) >= 100 and ate < 0.02 and e2e < 0.01 * length
    report(7, "box odometry", ok,
           f"{len(ds.scans)} scans, ATE {ate * 1e3:.1f} mm, e2e {e2e * 1e3:.1f} mm over {length:.1f} m")


def test_c08_merging_benefit():
    r = corridor_runs()
    wins = int(np.sum(r[:, 1] <= r[:, 0]))
    gain = 1.0 - r[:, 1].mean() / r[:, 0].mean()
    per_seed = ", ".join(f"{a:.3f}/{b:.3f}" for a, b in r)
    report(8, "merging benefit on corridor", wins >= 4 and gain > 0.10,
           f"wins {wins}/5, mean improvement {gain * 100:.1f}%, ATE off/on m: {per_seed}")


def test_c09_resource_trend():
    worse = []
    for build in (floor_map, corridor_map):
        on, off = build(merge=True), build(merge=False)
        if not on.stats()["plane_bytes"] < off.stats()["plane_bytes"]:
            worse.append(build.__name__)
    _, res = box_run()
    if res.map_stats["plane_bytes"] >= _run(box_run()[0], False).map_stats["plane_bytes"]:
        worse.append("box")

    import timeit

    def latency(n):
        side = int(round(n ** (1 / 3))) + 1
        keys = [(i, j, k) for i in range(side) for j in range(side) for k in range(side)][:n]
        vm = synthetic_map(keys, [z_plane(-0.1)] * len(keys))
        pts = (np.array(keys[:: max(1, len(keys) // 500)], dtype=float) + 0.5) * 0.5
        t = timeit.Timer(lambda: [vm.query_plane(p) for p in pts])
        return min(t.repeat(5, 3)) / (3 * len(pts))

    ratio = latency(20_000) / latency(2_000)

    ds = simulate(box_scene(6.25, 6.25, -1.25, 2.75),
                  TrajectorySpec(circle_waypoints(), imu_rate=200, scan_rate=5), seed=2, n_scans=15,
                  pattern_kw=dict(n_rings=20, n_azimuth=500, elev_min_deg=-30, elev_max_deg=30))
    t0 = time.perf_counter()
    run = _run(ds, True)
    per_scan = (time.perf_counter() - t0) / len(ds.scans)
    pts = np.mean([d["points"] for d in run.diagnostics])
    ms_10k = per_scan * 1e3 * 1e4 / pts
    report(9, "resource trend", not worse and ratio < 2.0,
           f"storage regressions {worse or 'none'}, latency x{ratio:.2f} for 10x map, "
           f"{ms_10k:.0f} ms per 10k-point scan (logged only)")


def test_c10_ieskf_numerics():
    rng = np.random.default_rng(1010)
    worst = 0.0
    for _ in range(200):
        st = NavState(rot=so3_exp(rng.normal(size=3)), trans=rng.normal(size=3) * 3)
        m = _match(rng.normal(size=3) * 4, rng.uniform(-0.5, 0.5, 3), MainAxis(int(rng.integers(3))))
        ms = MatchSet.from_matches([m])
        _, _, H = match_terms(st, ms)
        eps = 1e-6
        num = np.empty(6)
        for i in range(6):
            d = np.zeros(DIM)
            d[i] = eps
            num[i] = (match_terms(st.boxplus(d), ms)[0][0] - match_terms(st.boxplus(-d), ms)[0][0]) / (2 * eps)
        worst = max(worst, np.linalg.norm(H[0] - num) / max(np.linalg.norm(num), 1e-9))
    box_run()
    corridor_runs()
    rises = sum(1 for c in _COSTS for a, b in zip(c, c[1:]) if b > a)
    prior = initial_state()
    exact = iekf_update(prior, []) is prior
    ok = worst < 1e-5 and rises == 0 and len(_COSTS) > 0 and exact
    report(10, "IESKF numerics", ok,
           f"Jacobian rel err {worst:.1e}, {rises} objective increases over {len(_COSTS)} updates, "
           f"empty update returns prior {exact}")
