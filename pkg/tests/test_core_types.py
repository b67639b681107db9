import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mergemap.geometry import (CovPoint, Frame, RigidTransform, boxminus, boxplus, euler_zyx_to_rot,
                               is_rotation, quat_to_rot, rot_to_euler_zyx, rot_to_quat, skew,
                               so3_exp, so3_log)
from mergemap.odometry import DIM, NavState

vec3 = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


def test_skew_is_cross_product(rng):
    a, b = rng.normal(size=(2, 3))
    assert np.allclose(skew(a) @ b, np.cross(a, b))


@given(vec3)
def test_exp_is_a_rotation(phi):
    assert is_rotation(so3_exp(phi), tol=1e-9)


@given(vec3.filter(lambda v: np.linalg.norm(v) < math.pi - 1e-3))
def test_log_inverts_exp(phi):
    assert np.allclose(so3_log(so3_exp(phi)), phi, atol=1e-9)


def test_log_at_pi_returns_valid_axis():
    for axis in np.eye(3):
        R = so3_exp(math.pi * axis)
        w = so3_log(R)
        assert np.isclose(np.linalg.norm(w), math.pi)
        assert np.allclose(so3_exp(w), R, atol=1e-9)


def test_tiny_angles_use_series():
    phi = np.array([1e-12, -2e-12, 3e-12])
    assert np.allclose(so3_log(so3_exp(phi)), phi, rtol=1e-6, atol=0)


@given(vec3)
def test_quaternion_roundtrip(phi):
    R = so3_exp(phi)
    q = rot_to_quat(R)
    assert q[3] >= 0
    assert np.isclose(np.linalg.norm(q), 1.0)
    assert np.allclose(quat_to_rot(q), R, atol=1e-12)


def test_quaternion_is_normalized_on_ingest():
    assert np.allclose(quat_to_rot([0, 0, 0, 2.0]), np.eye(3))
    with pytest.raises(ValueError):
        quat_to_rot([0, 0, 0, 0])


def test_euler_roundtrip(rng):
    for _ in range(50):
        y, p, r = rng.uniform(-3, 3), rng.uniform(-1.5, 1.5), rng.uniform(-3, 3)
        assert np.allclose(rot_to_euler_zyx(euler_zyx_to_rot(y, p, r)), (y, p, r))


@given(vec3, vec3, vec3, vec3)
def test_compose_inverse_identity(p1, t1, p2, t2):
    A = RigidTransform(so3_exp(p1), t1)
    B = RigidTransform(so3_exp(p2), t2)
    I = A.compose(A.inverse())
    assert np.allclose(I.rot, np.eye(3), atol=1e-12) and np.allclose(I.trans, 0, atol=1e-12)
    x = np.array([0.3, -1.0, 2.0])
    assert np.allclose((A @ B).apply(x), A.apply(B.apply(x)))


@given(vec3, vec3, arrays(np.float64, 6, elements=st.floats(-1.0, 1.0)))
def test_boxminus_inverts_boxplus(p, t, d):
    X = RigidTransform(so3_exp(p), t)
    assert np.allclose(boxminus(boxplus(X, d), X), d, atol=1e-9)


def test_batch_apply_matches_single(rng):
    T = RigidTransform(so3_exp(rng.normal(size=3)), rng.normal(size=3))
    P = rng.normal(size=(7, 3))
    assert np.allclose(T.apply(P), np.array([T.apply(p) for p in P]))


def test_transform_is_immutable():
    T = RigidTransform()
    with pytest.raises(ValueError):
        T.rot[0, 0] = 2.0


def test_cov_point_rejects_asymmetric():
    with pytest.raises(ValueError):
        CovPoint(np.zeros(3), np.array([[1, 1e-3, 0], [0, 1, 0], [0, 0, 1.0]]), Frame.SENSOR)


def test_navstate_manifold_ops(rng):
    x = NavState(rot=so3_exp(rng.normal(size=3)), trans=rng.normal(size=3))
    d = rng.normal(size=DIM) * 0.3
    assert np.allclose(x.boxplus(d).boxminus(x), d, atol=1e-9)
    assert np.array_equal(x.boxplus(np.zeros(DIM)).boxminus(x), np.zeros(DIM))
