"""Rotations, rigid transforms and manifold retraction on SO(3)/SE(3).

Rotations are plain 3x3 float arrays. Perturbations are applied on the right,
``R ⊞ δθ = R · Exp(δθ)``, and translations are additive, so a 6-vector tangent
delta is ordered ``[δθ, δt]``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-10


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def so3_exp(phi) -> np.ndarray:
    """Rodrigues formula for an axis-angle vector."""
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(float(phi @ phi))
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R) -> np.ndarray:
    """Inverse of :func:`so3_exp` returning an axis-angle with norm in [0, π].

    For a rotation of exactly π the axis sign is ambiguous; whichever valid
    axis the eigen-decomposition yields is returned.
    """
    R = np.asarray(R, dtype=float)
    cos_theta = 0.5 * (np.trace(R) - 1.0)
    cos_theta = min(1.0, max(-1.0, cos_theta))
    theta = math.acos(cos_theta)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        # second-order series of theta / (2 sin theta)
        return 0.5 * (1.0 + theta * theta / 6.0) * w
    if math.pi - theta < 1e-6:
        # near π: axis from the symmetric part, sign fixed by w when possible
        B = (0.5 * (R + R.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(max(B[k, k], 1e-300))
        if axis @ w < 0.0:
            axis = -axis
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * math.sin(theta)) * w


def right_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(float(phi @ phi))
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    c = 1.0 / (theta * theta) - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * K + c * (K @ K)


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)


def quat_to_rot(q) -> np.ndarray:
    """``(qx, qy, qz, qw)`` to a rotation matrix, normalizing on ingest."""
    x, y, z, w = (float(c) for c in q)
    s = math.sqrt(x * x + y * y + z * z + w * w)
    if s == 0.0:
        raise ValueError("zero quaternion")
    x, y, z, w = x / s, y / s, z / s, w / s
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R) -> np.ndarray:
    """Rotation matrix to ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    if q[3] < 0.0:
        q = -q
    return q


def euler_zyx_to_rot(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def rot_to_euler_zyx(R) -> tuple[float, float, float]:
    R = np.asarray(R, dtype=float)
    pitch = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    yaw = math.atan2(R[1, 0], R[0, 0])
    roll = math.atan2(R[2, 1], R[2, 2])
    return yaw, pitch, roll


@dataclass(frozen=True)
class RigidTransform:
    """Pose ``p_world = rot @ p + trans``."""

    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rot, dtype=float).reshape(3, 3)
        trans = np.array(self.trans, dtype=float).reshape(3)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "trans", trans)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_quat(cls, q, t) -> "RigidTransform":
        return cls(quat_to_rot(q), t)

    def quat(self) -> np.ndarray:
        return rot_to_quat(self.rot)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rot @ other.rot, self.rot @ other.trans + self.trans)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rot.T, -self.rot.T @ self.trans)

    def apply(self, p) -> np.ndarray:
        """Transform one point ``(3,)`` or a batch ``(N, 3)``."""
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            return self.rot @ p + self.trans
        return p @ self.rot.T + self.trans

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rot
        M[:3, 3] = self.trans
        return M

    def boxplus(self, delta) -> "RigidTransform":
        delta = np.asarray(delta, dtype=float)
        return RigidTransform(self.rot @ so3_exp(delta[:3]), self.trans + delta[3:6])

    def boxminus(self, other: "RigidTransform") -> np.ndarray:
        """Tangent delta ``δ`` such that ``other.boxplus(δ) == self``."""
        return np.concatenate([so3_log(other.rot.T @ self.rot), self.trans - other.trans])

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(np.array_equal(self.rot, other.rot) and np.array_equal(self.trans, other.trans))

    def __hash__(self):
        return hash((self.rot.tobytes(), self.trans.tobytes()))


def transform_point(T: RigidTransform, p) -> np.ndarray:
    return T.apply(p)


def boxplus(x, delta):
    """Retraction for :class:`RigidTransform` and ``NavState``."""
    return x.boxplus(delta)


def boxminus(y, x) -> np.ndarray:
    """Local coordinates of ``y`` around ``x``; inverse of :func:`boxplus`."""
    return y.boxminus(x)


class Frame(enum.Enum):
    SENSOR = "sensor"
    WORLD = "world"


@dataclass(frozen=True)
class CovPoint:
    pos: np.ndarray
    cov: np.ndarray
    frame: Frame = Frame.SENSOR

    def __post_init__(self):
        pos = np.array(self.pos, dtype=float).reshape(3)
        cov = np.array(self.cov, dtype=float).reshape(3, 3)
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0.0):
            raise ValueError("point covariance is not symmetric")
        pos.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "cov", cov)
