"""Incremental 3DOF plane fitting with first-order covariance.

A plane is stored as ``n = [a, b, d]`` of ``a*u + b*v + w + d = 0`` where
``(u, v, w)`` are the world coordinates cyclically permuted so that the main
axis (the one with unit coefficient) comes last:

    X -> (y, z, x),   Y -> (z, x, y),   Z -> (x, y, z)

Cyclic permutations keep the frame right-handed.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import CovPoint, Frame


class MainAxis(enum.IntEnum):
    X = 0
    Y = 1
    Z = 2

    @property
    def perm(self) -> tuple[int, int, int]:
        return ((self + 1) % 3, (self + 2) % 3, int(self))


class DegenerateFit(ValueError):
    """Points are collinear or coincident in the plane of the main axis."""


@dataclass(frozen=True)
class PlaneFitConfig:
    min_fit_points: int = 10
    planarity_ratio: float = 1.0 / 9.0
    planarity_abs: float = 0.01
    degenerate_tol: float = 1e-9

    def __post_init__(self):
        if self.min_fit_points < 3:
            raise ValueError("min_fit_points must be at least 3")
        if self.planarity_ratio <= 0 or self.planarity_abs <= 0:
            raise ValueError("planarity thresholds must be positive")


def _as_points(points) -> np.ndarray:
    if len(points) and isinstance(points[0], CovPoint):
        return np.array([p.pos for p in points])
    return np.asarray(points, dtype=float).reshape(-1, 3)


def _as_covs(points) -> np.ndarray:
    return np.array([p.cov for p in points]).reshape(-1, 3, 3)


def select_main_axis(points) -> MainAxis:
    """Axis of smallest projection variance; ties prefer Z, then Y, then X."""
    pts = _as_points(points)
    if pts.shape[0] < 3:
        raise ValueError("need at least 3 points to choose a main axis")
    return _argmin_axis(pts.var(axis=0))


def _argmin_axis(var) -> MainAxis:
    best = MainAxis.Z
    for ax in (MainAxis.Y, MainAxis.X):
        if var[ax] < var[best]:
            best = ax
    return best


@dataclass
class FitAccumulator:
    """Running sums for the least-squares normal equations.

    ``s1`` holds ``[Σu, Σv, Σw]`` and ``s2`` the symmetric matrix of
    ``Σuu, Σuv, ...`` in permuted coordinates relative to ``origin``
    (a world-frame anchor that keeps the sums well conditioned far from
    the map origin).
    """

    axis: MainAxis = MainAxis.Z
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    n_points: int = 0
    s1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    s2: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def copy(self) -> "FitAccumulator":
        return FitAccumulator(self.axis, self.origin.copy(), self.n_points, self.s1.copy(), self.s2.copy())

    def _local(self, pts) -> np.ndarray:
        return (np.asarray(pts, dtype=float).reshape(-1, 3) - self.origin)[:, self.axis.perm]

    def add(self, p) -> None:
        q = self._local(p)[0]
        self.n_points += 1
        self.s1 += q
        self.s2 += np.outer(q, q)

    def add_batch(self, pts) -> None:
        q = self._local(pts)
        self.n_points += q.shape[0]
        self.s1 += q.sum(axis=0)
        self.s2 += q.T @ q

    def with_axis(self, axis: MainAxis) -> "FitAccumulator":
        """Same sums expressed under another main axis (the moment set is closed under permutation)."""
        axis = MainAxis(axis)
        world1 = np.empty(3)
        world1[list(self.axis.perm)] = self.s1
        world2 = np.empty((3, 3))
        idx = list(self.axis.perm)
        world2[np.ix_(idx, idx)] = self.s2
        new = list(axis.perm)
        return FitAccumulator(axis, self.origin.copy(), self.n_points,
                              world1[new].copy(), world2[np.ix_(new, new)].copy())

    def sums(self) -> dict[str, float]:
        s1, s2 = self.s1, self.s2
        return {"x": s1[0], "y": s1[1], "z": s1[2],
                "xx": s2[0, 0], "yy": s2[1, 1], "zz": s2[2, 2],
                "xy": s2[0, 1], "xz": s2[0, 2], "yz": s2[1, 2]}

    def world_variances(self) -> np.ndarray:
        """Per-axis projection variance in world axis order."""
        n = max(self.n_points, 1)
        var_local = np.diag(self.s2) / n - (self.s1 / n) ** 2
        out = np.empty(3)
        out[list(self.axis.perm)] = var_local
        return out

    def covariance(self) -> np.ndarray:
        """Sample covariance of the accumulated points in permuted coordinates."""
        n = max(self.n_points, 1)
        mean = self.s1 / n
        return self.s2 / n - np.outer(mean, mean)


def accumulate(acc: FitAccumulator, p) -> FitAccumulator:
    out = acc.copy()
    out.add(p)
    return out


def _normal_system(acc: FitAccumulator):
    s1, s2, n = acc.s1, acc.s2, acc.n_points
    A = np.array([[s2[0, 0], s2[0, 1], s1[0]],
                  [s2[0, 1], s2[1, 1], s1[1]],
                  [s1[0], s1[1], float(n)]])
    e = -np.array([s2[0, 2], s2[1, 2], s1[2]])
    return A, e


def _adjugate3(A) -> np.ndarray:
    (a, b, c), (d, e, f), (g, h, i) = A
    return np.array([[e * i - f * h, c * h - b * i, b * f - c * e],
                     [f * g - d * i, a * i - c * g, c * d - a * f],
                     [d * h - e * g, b * g - a * h, a * e - b * d]])


def _solve_local(acc: FitAccumulator, tol: float = 1e-9):
    """Solve in anchored coordinates; returns ``(n_local, A_inverse)``."""
    if acc.n_points < 3:
        raise DegenerateFit(f"need at least 3 points, have {acc.n_points}")
    A, e = _normal_system(acc)
    adj = _adjugate3(A)
    det = float(A[0] @ adj[:, 0])
    N = acc.n_points
    # det(A) = N^3 * det(2x2 in-plane covariance); compare to its spread scale
    spread = (A[0, 0] - A[0, 2] ** 2 / N + A[1, 1] - A[1, 2] ** 2 / N) / N
    if not (spread > 0.0 and abs(det) > tol * N ** 3 * spread ** 2):
        raise DegenerateFit(f"singular normal equations (det={det:.3e})")
    ainv = adj / det
    return ainv @ e, ainv


def _to_world(n_local, acc: FitAccumulator) -> np.ndarray:
    o = acc.origin[list(acc.axis.perm)]
    a, b, d = n_local
    return np.array([a, b, d - a * o[0] - b * o[1] - o[2]])


def solve_plane(acc: FitAccumulator, tol: float = 1e-9) -> np.ndarray:
    """Closed-form ``n = adj(A) e / |A|`` for the accumulated points."""
    n_local, _ = _solve_local(acc, tol)
    return _to_world(n_local, acc)


def plane_cov(points, acc: FitAccumulator, n, covs=None) -> np.ndarray:
    """First-order covariance of ``n`` given per-point covariances.

    ``points`` is a list of world-frame :class:`CovPoint`, or an ``(N, 3)``
    array with the matching ``(N, 3, 3)`` covariances passed as ``covs``.
    """
    if covs is None:
        pts, covs = _as_points(points), _as_covs(points)
    else:
        pts, covs = _as_points(points), np.asarray(covs, dtype=float).reshape(-1, 3, 3)
    if pts.shape[0] != acc.n_points:
        raise ValueError("points do not match the accumulator")
    perm = list(acc.axis.perm)
    o = acc.origin[perm]
    a, b, d = np.asarray(n, dtype=float)
    n_local = np.array([a, b, d + a * o[0] + b * o[1] + o[2]])
    _, ainv = _solve_local(acc)
    local = (pts - acc.origin)[:, perm]
    covs_local = covs[:, perm][:, :, perm]
    cov_local = kernels.plane_cov(local, covs_local, ainv, n_local)
    L = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-o[0], -o[1], 1.0]])
    cov = L @ cov_local @ L.T
    return 0.5 * (cov + cov.T)


def plane_jacobians(points, acc: FitAccumulator, n) -> np.ndarray:
    """``∂n/∂p_i`` for every world-frame point, ``(N, 3, 3)``.

    Same per-point terms that :func:`plane_cov` contracts with the point
    covariances, mapped back to world axes.
    """
    pts = _as_points(points)
    perm = list(acc.axis.perm)
    o = acc.origin[perm]
    a, b, d = np.asarray(n, dtype=float)
    _, ainv = _solve_local(acc)
    q = (pts - acc.origin)[:, perm]
    r = a * q[:, 0] + b * q[:, 1] + q[:, 2] + (d + a * o[0] + b * o[1] + o[2])
    phi = np.column_stack([q[:, 0], q[:, 1], np.ones(len(q))])
    M = np.empty((len(q), 3, 3))
    M[:, :, 0] = a * phi
    M[:, :, 1] = b * phi
    M[:, :, 2] = phi
    M[:, 0, 0] += r
    M[:, 1, 1] += r
    L = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-o[0], -o[1], 1.0]])
    J_local = -np.einsum("ij,njk->nik", L @ ainv, M)
    J = np.empty_like(J_local)
    J[:, :, perm] = J_local
    return J


@dataclass(frozen=True)
class Planarity:
    is_plane: bool
    eigvals: np.ndarray


def _planarity(cov, cfg: PlaneFitConfig) -> Planarity:
    ev = np.linalg.eigvalsh(cov)
    ev = np.clip(ev, 0.0, None)
    lo, mid = ev[0], ev[1]
    ok = bool(mid > 0.0 and lo / mid < cfg.planarity_ratio and lo < cfg.planarity_abs)
    return Planarity(ok, ev)


def pca_planarity(points, cfg: PlaneFitConfig = PlaneFitConfig()) -> Planarity:
    pts = _as_points(points)
    if pts.shape[0] < cfg.min_fit_points:
        raise ValueError(f"need at least {cfg.min_fit_points} points for a planarity test")
    return _planarity(np.cov(pts.T, bias=True), cfg)


@dataclass
class PlaneFit:
    n: np.ndarray
    axis: MainAxis
    cov: np.ndarray
    n_points: int
    retained_pts: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    retained_covs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3)))
    converged: bool = False

    @property
    def retained_points(self) -> list[CovPoint]:
        return [CovPoint(p, c, Frame.WORLD) for p, c in zip(self.retained_pts, self.retained_covs)]

    @property
    def omega(self) -> np.ndarray:
        return np.array([self.n[0], self.n[1], 1.0])

    def unit_normal(self) -> tuple[np.ndarray, float]:
        """World-frame unit normal and offset ``(ν, δ)`` with ``ν·p + δ = 0``."""
        norm = float(np.linalg.norm(self.omega))
        nu = np.empty(3)
        nu[list(self.axis.perm)] = self.omega / norm
        return nu, float(self.n[2]) / norm

    def distance(self, p) -> float:
        nu, off = self.unit_normal()
        return float(nu @ np.asarray(p, dtype=float) + off)

    def reparameterized(self, axis: MainAxis, min_coeff: float = 0.1) -> "PlaneFit | None":
        """Same plane expressed under another main axis, covariance mapped to first order.

        Returns ``None`` when the new axis coefficient is too small relative to
        the normal for the division to be well conditioned.
        """
        axis = MainAxis(axis)
        if axis == self.axis:
            return self
        c = np.empty(3)
        c[list(self.axis.perm)] = self.omega
        cb = c[axis]
        if abs(cb) < min_coeff * np.linalg.norm(c):
            return None
        p0, p1, _ = axis.perm
        n_new = np.array([c[p0], c[p1], self.n[2]]) / cb
        # m = (c[p0], c[p1], d, c[axis]) is linear in the old n
        E = np.zeros((4, 3))
        old = list(self.axis.perm)
        for row, world in enumerate((p0, p1)):
            if world in old[:2]:
                E[row, old.index(world)] = 1.0
        E[2, 2] = 1.0
        if axis in old[:2]:
            E[3, old.index(axis)] = 1.0
        D = np.zeros((3, 4))
        D[:, :3] = np.eye(3) / cb
        D[:, 3] = -n_new / cb
        J = D @ E
        cov = J @ self.cov @ J.T
        return PlaneFit(n_new, axis, 0.5 * (cov + cov.T), self.n_points, converged=self.converged)

    def freeze(self) -> None:
        self.converged = True
        self.retained_pts = np.zeros((0, 3))
        self.retained_covs = np.zeros((0, 3, 3))


def fit_plane(points, covs=None, axis: MainAxis | None = None, origin=None) -> PlaneFit:
    """One-shot fit: choose the axis, accumulate, solve, and compute covariance."""
    pts = _as_points(points)
    covs = _as_covs(points) if covs is None else np.asarray(covs, dtype=float).reshape(-1, 3, 3)
    axis = select_main_axis(pts) if axis is None else MainAxis(axis)
    acc = FitAccumulator(axis, np.zeros(3) if origin is None else np.asarray(origin, dtype=float))
    acc.add_batch(pts)
    n = solve_plane(acc)
    return PlaneFit(n, axis, plane_cov(pts, acc, n, covs), acc.n_points, pts.copy(), covs.copy())
