import numpy as np
import pytest

from mergemap.geometry import CovPoint, Frame, RigidTransform, so3_exp, so3_log
from mergemap.noise import LidarNoiseSpec, sensor_covariances
from mergemap.odometry import (DIM, GRAVITY, ImuNoise, ImuSample, MatchSet, NavState,
                               NonMonotonicTimestamps, PlaneMatch, _Groups, _measurement,
                               _plane_jacobians, associate, constant_velocity_predict,
                               estimate_gravity, iekf_update, imu_propagate, initial_state,
                               match_terms, residual, residual_noise)
from mergemap.plane import MainAxis, PlaneFit
from mergemap.sim import (Trajectory, TrajectorySpec, box_scene, cast_rays, circle_waypoints,
                          corridor_scene, gen_imu, perturb, spinning_pattern)

from maphelpers import scan_into

BOX = dict(n_rings=24, n_azimuth=720, elev_min_deg=-30, elev_max_deg=30)


def _match(p, n, axis, pcov=None, cov=None):
    plane = PlaneFit(np.asarray(n, float), MainAxis(axis), np.zeros((3, 3)) if pcov is None else pcov, 50, converged=True)
    return PlaneMatch(CovPoint(p, np.eye(3) * 1e-4 if cov is None else cov, Frame.SENSOR), plane)


def test_empty_update_returns_prior_exactly():
    prior = initial_state()
    info = {}
    assert iekf_update(prior, [], diag=info) is prior
    assert info["iterations"] == 0 and info["matches"] == 0
    assert iekf_update(prior, MatchSet.empty()) is prior


def test_scalar_kalman_oracle():
    """One floor match informs only z; the update is the scalar Kalman step."""
    P, R = 0.04 ** 2, 0.01 ** 2
    cov = np.eye(DIM) * 1e-2
    cov[5, 5] = P
    prior = NavState(trans=np.array([0.0, 0.0, 0.05]), cov=cov)
    m = _match(np.array([0.0, 0.0, -1.0]), [0.0, 0.0, 1.0], MainAxis.Z, cov=np.eye(3) * R)
    h0 = residual(prior, m)
    assert np.isclose(h0, 0.05) and np.isclose(residual_noise(prior, m), R)
    post = iekf_update(prior, [m], max_iters=10, tol=1e-14)
    assert np.isclose(post.trans[2], 0.05 - P * h0 / (P + R), atol=1e-12)
    assert np.isclose(post.cov[5, 5], P * R / (P + R), rtol=1e-9)
    assert np.allclose(post.trans[:2], 0, atol=1e-15)


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        st = NavState(rot=so3_exp(rng.normal(size=3)), trans=rng.normal(size=3) * 3)
        ax = MainAxis(int(rng.integers(3)))
        m = _match(rng.normal(size=3) * 4, rng.uniform(-0.5, 0.5, 3), ax)
        ms = MatchSet.from_matches([m])
        _, _, H = match_terms(st, ms)
        eps = 1e-6
        num = np.empty(6)
        for i in range(6):
            d = np.zeros(DIM)
            d[i] = eps
            num[i] = (match_terms(st.boxplus(d), ms)[0][0] - match_terms(st.boxplus(-d), ms)[0][0]) / (2 * eps)
        worst = max(worst, np.linalg.norm(H[0] - num) / max(np.linalg.norm(num), 1e-9))
    assert worst < 1e-5


def test_plane_jacobian_matches_finite_differences(rng):
    for ax in MainAxis:
        st = NavState(rot=so3_exp(rng.normal(size=3)), trans=rng.normal(size=3))
        n = rng.uniform(-0.5, 0.5, 3)
        ms = MatchSet.from_matches([_match(rng.normal(size=3) * 3, n, ax)])
        h, _, _ = match_terms(st, ms)
        J = _plane_jacobians(st, ms, h)[0]
        num = np.empty(3)
        for i in range(3):
            up, dn = ms.normals.copy(), ms.normals.copy()
            up[0, i] += 1e-6
            dn[0, i] -= 1e-6
            num[i] = (match_terms(st, MatchSet(ms.points, ms.covs, up, ms.axes, ms.plane_covs))[0][0]
                      - match_terms(st, MatchSet(ms.points, ms.covs, dn, ms.axes, ms.plane_covs))[0][0]) / 2e-6
        assert np.allclose(J, num, rtol=1e-6, atol=1e-9)


def _random_matches(rng, m, roots):
    pts = rng.normal(size=(m, 3)) * 4
    return MatchSet(pts, sensor_covariances(pts, LidarNoiseSpec()),
                    rng.uniform(-0.3, 0.3, (m, 3)), rng.integers(0, 3, m).astype(np.int64),
                    np.array([np.diag(rng.uniform(1e-6, 1e-4, 3))] * m), roots.astype(np.int64))


def test_shared_plane_marginalization_equals_dense_solve(rng):
    roots = rng.integers(0, 4, 40)
    ms = _random_matches(rng, 40, roots)
    # matches with the same root must share the plane
    for r in np.unique(roots):
        sel = roots == r
        ms.normals[sel] = ms.normals[sel][0]
        ms.axes[sel] = ms.axes[sel][0]
        ms.plane_covs[sel] = ms.plane_covs[sel][0]
    x = NavState(rot=so3_exp(rng.normal(size=3) * 0.1), trans=rng.normal(size=3) * 0.1)
    cost, G, g = _measurement(x, ms, _Groups.of(ms.roots))
    h, r, H = match_terms(x, ms)
    jn = _plane_jacobians(x, ms, h)
    D = np.diag(r - np.einsum("ni,nij,nj->n", jn, ms.plane_covs, jn))
    for rt in np.unique(roots):
        s = np.flatnonzero(roots == rt)
        D[np.ix_(s, s)] += jn[s] @ ms.plane_covs[s[0]] @ jn[s].T
    W = np.linalg.inv(D)
    assert np.isclose(cost, h @ W @ h, rtol=1e-9)
    assert np.allclose(G, H.T @ W @ H, rtol=1e-8, atol=1e-8 * np.abs(G).max())
    assert np.allclose(g, H.T @ W @ h, rtol=1e-8, atol=1e-8 * np.abs(g).max())


def test_single_match_per_root_reduces_to_diagonal(rng):
    ms = _random_matches(rng, 25, np.arange(25))
    x = NavState()
    a = _measurement(x, ms, _Groups.of(ms.roots))
    b = _measurement(x, ms, None)
    assert np.isclose(a[0], b[0], rtol=1e-10)
    assert np.allclose(a[1], b[1], rtol=1e-9) and np.allclose(a[2], b[2], rtol=1e-9)


@pytest.fixture(scope="module")
def box_map():
    scene = box_scene(6.25, 6.25, -1.25, 2.75)
    poses = [RigidTransform(so3_exp([0, 0, 0.4 * k]), [np.cos(k), np.sin(k), 0.0]) for k in range(8)]
    vm = scan_into(scene, poses, 16, LidarNoiseSpec(0.02, np.deg2rad(0.05)), **BOX)
    return scene, vm


def test_registration_from_perturbed_prior(box_map):
    scene, vm = box_map
    rng = np.random.default_rng(3)
    truth = RigidTransform(so3_exp([0.0, 0.0, 0.3]), [0.5, -0.3, 0.1])
    nz = LidarNoiseSpec(0.02, np.deg2rad(0.05))
    frame = perturb(cast_rays(scene, truth, spinning_pattern(scan_index=99, **BOX)), nz, rng)
    covs = sensor_covariances(frame.points, nz)
    dth = np.deg2rad(1.0) * np.array([0.6, -0.48, 0.64])
    prior = initial_state(RigidTransform(truth.rot @ so3_exp(dth), truth.trans + [0.03, -0.03, 0.028]),
                          pose_std=0.1)
    info = {}
    post = prior
    for _ in range(3):  # re-associate as the estimate improves
        post = iekf_update(prior, associate(vm, frame.points, covs, post), max_iters=10, diag=info)
    assert np.linalg.norm(post.trans - truth.trans) < 5e-3
    assert np.rad2deg(np.linalg.norm(so3_log(truth.rot.T @ post.rot))) < 0.05
    assert all(b <= a + 1e-12 for a, b in zip(info["costs"], info["costs"][1:]))
    ev = np.linalg.eigvalsh(post.cov)
    assert ev.min() > -1e-15 and np.trace(post.cov) <= np.trace(prior.cov)


def test_observability_along_corridor_axis():
    # exact map planes, noisy scan: no plane normal has an x component
    scene = corridor_scene(length=20.0)
    poses = [RigidTransform(np.eye(3), [x, 0.0, 0.0]) for x in np.arange(0.0, 20.0, 1.0)]
    vm = scan_into(scene, poses, 40, **BOX)
    assert len(vm.roots()) == 4
    truth = RigidTransform(np.eye(3), [10.2, 0.05, 0.0])
    nz = LidarNoiseSpec(0.02, np.deg2rad(0.05))
    frame = perturb(cast_rays(scene, truth, spinning_pattern(scan_index=7, **BOX)), nz, 1)
    covs = sensor_covariances(frame.points, nz)
    prior = initial_state(truth, pose_std=0.05)
    ms = associate(vm, frame.points, covs, prior)
    post = iekf_update(prior, ms)
    assert len(ms) > 100
    assert post.cov[3, 3] >= 0.95 * prior.cov[3, 3]
    assert post.cov[4, 4] < 0.1 * prior.cov[4, 4] and post.cov[5, 5] < 0.1 * prior.cov[5, 5]


def test_stationary_imu_keeps_pose():
    g = np.array([0.0, 0.0, -GRAVITY])
    samples = [ImuSample(0.01 * i, np.zeros(3), -g) for i in range(101)]
    s = imu_propagate(initial_state(gravity=g), samples)
    assert np.allclose(s.trans, 0, atol=1e-12) and np.allclose(s.vel, 0, atol=1e-12)
    assert np.allclose(s.rot, np.eye(3))
    assert s.cov[3, 3] > initial_state().cov[3, 3]


def test_imu_rejects_non_increasing_time():
    samples = [ImuSample(0.0, np.zeros(3), np.zeros(3)), ImuSample(0.0, np.zeros(3), np.zeros(3))]
    with pytest.raises(NonMonotonicTimestamps):
        imu_propagate(initial_state(), samples)


def test_circle_integration_matches_closed_form():
    spec = TrajectorySpec(circle_waypoints(), imu_rate=400, scan_rate=5, imu_noise=ImuNoise(0, 0, 0, 0))
    tr = Trajectory(spec)
    imu = gen_imu(tr, 0)
    T0 = tr.pose(imu[0].t)
    s0 = NavState(rot=T0.rot.copy(), trans=T0.trans.copy(), vel=tr.velocity(imu[0].t))
    s = imu_propagate(s0, imu)
    end = tr.pose(imu[-1].t)
    length = sum(np.linalg.norm(tr._pos(t1) - tr._pos(t0)) for t0, t1 in
                 zip(np.arange(0, tr.t1, 0.05), np.arange(0.05, tr.t1 + 0.05, 0.05)))
    assert np.linalg.norm(s.trans - end.trans) < 1e-3 * length


def test_gravity_estimate_from_rest():
    g = np.array([0.3, -0.2, -9.8])
    samples = [ImuSample(0.005 * i, np.zeros(3), -g) for i in range(400)]
    est = estimate_gravity(samples)
    assert np.isclose(np.linalg.norm(est), GRAVITY)
    assert np.allclose(est / GRAVITY, g / np.linalg.norm(g))


def test_constant_velocity_prediction():
    a = initial_state()
    b = NavState(rot=so3_exp([0, 0, 0.1]), trans=np.array([1.0, 0, 0]), cov=a.cov)
    c = constant_velocity_predict(b, a, 0.1, 0.1)
    assert np.allclose(c.trans, b.trans + b.rot @ [1.0, 0, 0])
    assert np.allclose(so3_log(b.rot.T @ c.rot), [0, 0, 0.1])
    assert c.cov[0, 0] > b.cov[0, 0]


def test_gate_drops_outliers():
    from maphelpers import synthetic_map, z_plane
    vm = synthetic_map([(0, 0, -1)], [z_plane(0.25, cov=1e-8)])
    st = initial_state(pose_std=1e-3)
    pts = np.array([[0.1, 0.1, -0.25], [0.2, 0.2, -0.45]])
    covs = np.broadcast_to(np.eye(3) * 1e-6, (2, 3, 3))
    ms = associate(vm, pts, covs, st)
    assert len(ms) == 1 and ms.index.tolist() == [0]
