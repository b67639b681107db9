"""LiDAR point measurement covariance in sensor and world frames."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import CovPoint, Frame, RigidTransform, skew

MIN_RANGE = 1e-6


@dataclass(frozen=True)
class LidarNoiseSpec:
    """Range std in meters and bearing std in radians."""

    sigma_range: float = 0.02
    sigma_bearing: float = float(np.deg2rad(0.05))

    def __post_init__(self):
        if not (self.sigma_range >= 0.0 and self.sigma_bearing >= 0.0):
            raise ValueError("noise standard deviations must be non-negative")


@dataclass(frozen=True)
class BearingDecomposition:
    omega: np.ndarray
    depth: float
    basis: np.ndarray


@dataclass(frozen=True)
class PoseUncertainty:
    cov_rot: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    cov_trans: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    @classmethod
    def from_state_cov(cls, P) -> "PoseUncertainty":
        """Rotation and translation blocks of a ``[δθ, δt, ...]`` covariance."""
        P = np.asarray(P)
        return cls(P[0:3, 0:3].copy(), P[3:6, 3:6].copy())


class TooCloseError(ValueError):
    """Point is too close to the sensor origin to define a bearing."""


def tangent_basis(omega) -> np.ndarray:
    """Deterministic orthonormal ``3x2`` basis of the plane orthogonal to ``omega``.

    Starts from the canonical axis least aligned with ``omega``, removes its
    ``omega`` component, and completes the pair with a cross product.
    """
    omega = np.asarray(omega, dtype=float)
    k = int(np.argmin(np.abs(omega)))
    e = np.zeros(3)
    e[k] = 1.0
    b1 = e - (e @ omega) * omega
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(omega, b1)
    b2 /= np.linalg.norm(b2)
    return np.column_stack([b1, b2])


def tangent_bases(omegas) -> np.ndarray:
    """Row-wise :func:`tangent_basis` for ``(N, 3)`` unit vectors, ``(N, 3, 2)``."""
    omegas = np.asarray(omegas, dtype=float).reshape(-1, 3)
    k = np.argmin(np.abs(omegas), axis=1)
    e = np.zeros_like(omegas)
    e[np.arange(len(k)), k] = 1.0
    b1 = e - np.einsum("ni,ni->n", e, omegas)[:, None] * omegas
    b1 /= np.linalg.norm(b1, axis=1, keepdims=True)
    b2 = np.cross(omegas, b1)
    b2 /= np.linalg.norm(b2, axis=1, keepdims=True)
    return np.stack([b1, b2], axis=2)


def decompose(p_sensor) -> BearingDecomposition:
    p = np.asarray(p_sensor, dtype=float).reshape(3)
    depth = float(np.linalg.norm(p))
    if not depth > MIN_RANGE:
        raise TooCloseError(f"point {p} is within {MIN_RANGE} m of the sensor")
    omega = p / depth
    return BearingDecomposition(omega, depth, tangent_basis(omega))


def point_cov_sensor(dec: BearingDecomposition, noise: LidarNoiseSpec) -> np.ndarray:
    A = np.column_stack([dec.omega, -dec.depth * skew(dec.omega) @ dec.basis])
    S = np.diag([noise.sigma_range ** 2, noise.sigma_bearing ** 2, noise.sigma_bearing ** 2])
    cov = A @ S @ A.T
    return 0.5 * (cov + cov.T)


def sensor_point(p_sensor, noise: LidarNoiseSpec) -> CovPoint:
    return CovPoint(p_sensor, point_cov_sensor(decompose(p_sensor), noise), Frame.SENSOR)


def point_cov_world(p: CovPoint, T: RigidTransform, pu: PoseUncertainty) -> CovPoint:
    if p.frame is not Frame.SENSOR:
        raise ValueError("point_cov_world expects a sensor-frame point")
    S = skew(p.pos)
    R = T.rot
    cov = R @ (p.cov + S @ pu.cov_rot @ S.T) @ R.T + pu.cov_trans
    return CovPoint(T.apply(p.pos), 0.5 * (cov + cov.T), Frame.WORLD)


def sensor_covariances(points, noise: LidarNoiseSpec) -> np.ndarray:
    """Batched :func:`point_cov_sensor` for an ``(N, 3)`` array of ranged points."""
    points = np.asarray(points, dtype=float)
    if points.size and np.min(np.einsum("ni,ni->n", points, points)) <= MIN_RANGE ** 2:
        raise TooCloseError("scan contains a point at the sensor origin")
    return kernels.sensor_covariances(points, noise.sigma_range, noise.sigma_bearing)


def world_covariances(points, covs, T: RigidTransform, pu: PoseUncertainty):
    """Batched :func:`point_cov_world`; returns ``(points_w, covs_w)``."""
    return kernels.world_covariances(points, covs, T.rot, T.trans, pu.cov_rot, pu.cov_trans)
