import warnings

import numpy as np
import pytest

from mergemap.geometry import RigidTransform, euler_zyx_to_rot, so3_exp
from mergemap.noise import LidarNoiseSpec
from mergemap.odometry import GRAVITY, ImuNoise
from mergemap.sim import (CLUTTER, SceneSpec, Trajectory, TrajectorySpec, box_scene, cast_rays,
                          circle_waypoints, corridor_scene, corridor_waypoints, floor_scene,
                          gen_imu, messy_scene, perturb, rosette_pattern, simulate,
                          spinning_pattern)

G = np.array([0.0, 0.0, -GRAVITY])
QUIET = ImuNoise(0.0, 0.0, 0.0, 0.0)


def _static(yaw=0.3):
    T = RigidTransform(euler_zyx_to_rot(yaw, 0.1, -0.05), [1.0, 2.0, 0.5])
    return [(0.0, T), (1.0, T), (2.0, T)]


def test_stationary_imu_is_gravity_only():
    spec = TrajectorySpec(_static(), imu_rate=100, imu_noise=QUIET)
    R = spec.waypoints[0][1].rot
    for s in gen_imu(spec, 0):
        assert np.allclose(s.gyro, 0, atol=1e-12)
        assert np.allclose(s.acc, -R.T @ G, atol=1e-12)


def test_constant_velocity_line_has_no_proper_acceleration():
    R = euler_zyx_to_rot(0.4, 0.0, 0.0)
    wp = [(t, RigidTransform(R, [2.0 * t, -1.0 * t, 0.1 * t])) for t in np.arange(0.0, 3.01, 0.5)]
    spec = TrajectorySpec(wp, imu_rate=100, imu_noise=QUIET, end_condition="not-a-knot")
    for s in gen_imu(spec, 0):
        assert np.allclose(s.gyro, 0, atol=1e-10)
        assert np.allclose(s.acc, -R.T @ G, atol=1e-9)


def test_imu_noise_and_bias_statistics():
    spec = TrajectorySpec(_static(0.0) + [(20.0, _static(0.0)[0][1])], imu_rate=200,
                          imu_noise=ImuNoise(1e-2, 5e-2, 0, 0), gyro_bias=np.array([0.05, 0, 0]))
    imu = gen_imu(spec, 42)
    gy = np.array([s.gyro for s in imu])
    assert np.allclose(gy.mean(axis=0), [0.05, 0, 0], atol=1e-2)
    assert np.allclose(gy.std(axis=0), 1e-2 * np.sqrt(200), rtol=0.05)


def test_trajectory_generators_start_and_end_at_rest():
    for wp in (circle_waypoints(), corridor_waypoints()):
        tr = Trajectory(TrajectorySpec(wp))
        assert np.allclose(tr.velocity(tr.t0), 0, atol=1e-9)
        assert np.allclose(tr.velocity(tr.t1), 0, atol=1e-9)
        assert np.allclose(tr.velocity(0.5), 0, atol=1e-6)  # still inside the rest window
    circ = Trajectory(TrajectorySpec(circle_waypoints()))
    assert np.allclose(circ.pose(circ.t0).trans, circ.pose(circ.t1).trans, atol=1e-6)
    cor = Trajectory(TrajectorySpec(corridor_waypoints()))
    assert cor.pose(cor.t1).trans[0] == pytest.approx(40.0)


def test_waypoints_must_increase():
    with pytest.raises(ValueError):
        TrajectorySpec([(0.0, RigidTransform()), (0.0, RigidTransform())])


@pytest.mark.parametrize("make", [lambda: spinning_pattern(8, 100), lambda: rosette_pattern(500)])
def test_patterns_are_unit_rays(make):
    d = make()
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)


def test_spinning_interleaves_between_scans():
    a, b = spinning_pattern(4, 10, scan_index=0), spinning_pattern(4, 10, scan_index=1)
    assert a.shape == b.shape == (40, 3)
    assert not np.allclose(a, b)
    assert np.array_equal(spinning_pattern(4, 10), a)


def test_ray_hits_lie_on_labelled_planes():
    scene = box_scene(6.25, 6.25, -1.25, 2.75)
    T = RigidTransform(so3_exp([0.0, 0.0, 0.7]), [1.0, -2.0, 0.3])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        hits = cast_rays(scene, T, spinning_pattern(16, 360, -40, 40))
    world = T.apply(hits.points)
    planes = {p.label: p for p in scene.planes}
    assert len(hits.points) > 0
    for p, lbl in zip(world, hits.labels):
        pl = planes[int(lbl)]
        assert abs(pl.normal @ p + pl.offset) < 1e-9


def test_misses_are_dropped():
    scene = floor_scene()
    hits = cast_rays(scene, RigidTransform(), spinning_pattern(4, 36, 10, 40))
    assert hits.points.shape == (0, 3)


def test_clutter_points_are_labelled():
    scene = messy_scene()
    hits = cast_rays(scene, RigidTransform(), spinning_pattern(16, 360, -30, 30))
    assert np.any(hits.labels == CLUTTER) and np.any(hits.labels >= 0)


def test_scene_validation():
    base = floor_scene()
    with pytest.raises(ValueError):
        SceneSpec(base.planes + base.planes)


def test_perturb_matches_noise_model():
    scene = floor_scene((-50, 50), (-50, 50), -2.0)
    hits = cast_rays(scene, RigidTransform(), np.tile([[0.6, 0.0, -0.8]], (20000, 1)))
    nz = LidarNoiseSpec(0.05, 0.0)
    f = perturb(hits, nz, 3)
    r = np.linalg.norm(f.points, axis=1)
    assert np.isclose(r.std(), 0.05, rtol=0.03)
    assert np.allclose(f.points / r[:, None], [0.6, 0.0, -0.8], atol=1e-6)


def test_simulation_is_deterministic_per_seed():
    spec = TrajectorySpec(corridor_waypoints(length=5.0), imu_rate=100, scan_rate=5)
    kw = dict(pattern_kw=dict(n_rings=4, n_azimuth=90), n_scans=3)
    a = simulate(corridor_scene(10.0), spec, seed=7, **kw)
    b = simulate(corridor_scene(10.0), spec, seed=7, **kw)
    c = simulate(corridor_scene(10.0), spec, seed=8, **kw)
    assert all(np.array_equal(x.points, y.points) for x, y in zip(a.scans, b.scans))
    assert all(np.array_equal(x.acc, y.acc) for x, y in zip(a.imu, b.imu))
    assert not np.array_equal(a.scans[1].points, c.scans[1].points)
    assert len(a.scans) == 3 and a.groundtruth[0][0] == a.scans[0].t


def test_simulate_rejects_bad_rates_and_patterns():
    spec = TrajectorySpec(corridor_waypoints(length=5.0), imu_rate=100, scan_rate=3)
    with pytest.raises(ValueError):
        simulate(corridor_scene(10.0), spec)
    spec = TrajectorySpec(corridor_waypoints(length=5.0), imu_rate=100, scan_rate=5)
    with pytest.raises(ValueError):
        simulate(corridor_scene(10.0), spec, pattern="helix")
