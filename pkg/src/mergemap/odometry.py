"""Iterated error-state Kalman filter for point-to-plane registration.

Error-state ordering is ``[δθ, δt, δv, δb_g, δb_a, δg]`` (18 dims); rotation
errors are right perturbations ``R · Exp(δθ)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .geometry import CovPoint, Frame, RigidTransform, skew, so3_exp, so3_log
from .plane import PlaneFit
from .voxel_map import VoxelMap, unpack_key

DIM = 18
ROT, POS, VEL, BG, BA, GRAV = (slice(0, 3), slice(3, 6), slice(6, 9),
                               slice(9, 12), slice(12, 15), slice(15, 18))
GRAVITY = 9.81


class NonMonotonicTimestamps(ValueError):
    pass


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    acc: np.ndarray


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities (per √Hz) and bias random walks."""

    gyro: float = 1e-3
    acc: float = 1e-2
    gyro_bias_walk: float = 1e-5
    acc_bias_walk: float = 1e-4


@dataclass(frozen=True)
class NavState:
    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -GRAVITY]))
    cov: np.ndarray = field(default_factory=lambda: np.eye(DIM) * 1e-6)

    @property
    def pose(self) -> RigidTransform:
        return RigidTransform(self.rot, self.trans)

    def boxplus(self, delta) -> "NavState":
        delta = np.asarray(delta, dtype=float)
        return replace(self,
                       rot=self.rot @ so3_exp(delta[ROT]),
                       trans=self.trans + delta[POS],
                       vel=self.vel + delta[VEL],
                       bias_gyro=self.bias_gyro + delta[BG],
                       bias_acc=self.bias_acc + delta[BA],
                       gravity=self.gravity + delta[GRAV])

    def boxminus(self, other: "NavState") -> np.ndarray:
        return np.concatenate([so3_log(other.rot.T @ self.rot),
                               self.trans - other.trans,
                               self.vel - other.vel,
                               self.bias_gyro - other.bias_gyro,
                               self.bias_acc - other.bias_acc,
                               self.gravity - other.gravity])


def initial_state(pose: RigidTransform | None = None, gravity=None, pose_std=1e-4,
                  vel_std=1e-2, bias_gyro_std=1e-3, bias_acc_std=1e-2, gravity_std=1e-2) -> NavState:
    pose = pose or RigidTransform.identity()
    var = np.concatenate([np.full(6, pose_std ** 2), np.full(3, vel_std ** 2),
                          np.full(3, bias_gyro_std ** 2), np.full(3, bias_acc_std ** 2),
                          np.full(3, gravity_std ** 2)])
    g = np.array([0.0, 0.0, -GRAVITY]) if gravity is None else np.asarray(gravity, dtype=float)
    return NavState(rot=pose.rot.copy(), trans=pose.trans.copy(), gravity=g, cov=np.diag(var))


def estimate_gravity(samples, rot=None, window: float = 1.0, magnitude: float = GRAVITY) -> np.ndarray:
    """World gravity from mean specific force over the first ``window`` seconds at rest."""
    rot = np.eye(3) if rot is None else np.asarray(rot)
    t0 = samples[0].t
    acc = np.array([s.acc for s in samples if s.t <= t0 + window])
    g = -rot @ acc.mean(axis=0)
    return g / np.linalg.norm(g) * magnitude


def imu_propagate(state: NavState, samples, noise: ImuNoise = ImuNoise()) -> NavState:
    """Integrate consecutive IMU samples (midpoint rule) and propagate covariance."""
    if len(samples) < 2:
        return state
    R, p, v = state.rot, state.trans, state.vel
    bg, ba, g = state.bias_gyro, state.bias_acc, state.gravity
    P = state.cov.copy()
    I3 = np.eye(3)
    for s0, s1 in zip(samples[:-1], samples[1:]):
        dt = s1.t - s0.t
        if not dt > 0.0:
            raise NonMonotonicTimestamps(f"IMU timestamps not increasing at t={s1.t}")
        w = 0.5 * (np.asarray(s0.gyro) + np.asarray(s1.gyro)) - bg
        a = 0.5 * (np.asarray(s0.acc) + np.asarray(s1.acc)) - ba
        dR = so3_exp(w * dt)
        R_mid = R @ so3_exp(0.5 * w * dt)
        acc_w = R_mid @ a + g

        F = np.eye(DIM)
        F[ROT, ROT] = dR.T
        F[ROT, BG] = -I3 * dt
        F[POS, VEL] = I3 * dt
        F[VEL, ROT] = -R @ skew(a) * dt
        F[VEL, BA] = -R * dt
        F[VEL, GRAV] = I3 * dt
        q = np.zeros(DIM)
        q[ROT] = noise.gyro ** 2 * dt
        q[VEL] = noise.acc ** 2 * dt
        q[BG] = noise.gyro_bias_walk ** 2 * dt
        q[BA] = noise.acc_bias_walk ** 2 * dt
        P = F @ P @ F.T
        P[np.diag_indices(DIM)] += q

        p = p + v * dt + 0.5 * acc_w * dt * dt
        v = v + acc_w * dt
        R = R @ dR
    # re-orthonormalize accumulated drift
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return replace(state, rot=R, trans=p, vel=v, cov=0.5 * (P + P.T))


def constant_velocity_predict(state: NavState, previous: NavState, dt_prev: float, dt: float,
                              rot_std: float = 0.01, trans_std: float = 0.05) -> NavState:
    """LiDAR-only prior: repeat the last inter-scan motion, inflate pose covariance."""
    scale = dt / dt_prev if dt_prev > 0 else 0.0
    rel = previous.pose.inverse().compose(state.pose)
    dtheta = so3_log(rel.rot) * scale
    dtrans = rel.trans * scale
    R = state.rot @ so3_exp(dtheta)
    t = state.trans + state.rot @ dtrans
    P = state.cov.copy()
    P[ROT, ROT] += np.eye(3) * rot_std ** 2 * dt
    P[POS, POS] += np.eye(3) * trans_std ** 2 * dt
    vel = (t - state.trans) / dt if dt > 0 else state.vel
    return replace(state, rot=R, trans=t, vel=vel, cov=P)


@dataclass(frozen=True)
class PlaneMatch:
    point_sensor: CovPoint
    plane: PlaneFit
    root: tuple = (0, 0, 0)

    @property
    def omega(self) -> np.ndarray:
        return self.plane.omega


@dataclass
class MatchSet:
    """Struct-of-arrays form of a list of :class:`PlaneMatch`."""

    points: np.ndarray
    covs: np.ndarray
    normals: np.ndarray
    axes: np.ndarray
    plane_covs: np.ndarray
    roots: np.ndarray = None
    index: np.ndarray = None

    @classmethod
    def empty(cls) -> "MatchSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)),
                   np.zeros(0, dtype=np.int64), np.zeros((0, 3, 3)),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_matches(cls, matches) -> "MatchSet":
        if isinstance(matches, MatchSet):
            return matches
        matches = list(matches)
        if not matches:
            return cls.empty()
        return cls(np.array([m.point_sensor.pos for m in matches]),
                   np.array([m.point_sensor.cov for m in matches]),
                   np.array([m.plane.n for m in matches]),
                   np.array([int(m.plane.axis) for m in matches], dtype=np.int64),
                   np.array([m.plane.cov for m in matches]))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, i) -> PlaneMatch:
        from .plane import MainAxis
        plane = PlaneFit(self.normals[i], MainAxis(int(self.axes[i])), self.plane_covs[i], 0, converged=True)
        root = unpack_key(int(self.roots[i])) if self.roots is not None else (0, 0, 0)
        return PlaneMatch(CovPoint(self.points[i], self.covs[i], Frame.SENSOR), plane, tuple(root))

    def subset(self, mask) -> "MatchSet":
        pick = lambda a: None if a is None else a[mask]
        return MatchSet(self.points[mask], self.covs[mask], self.normals[mask], self.axes[mask],
                        self.plane_covs[mask], pick(self.roots), pick(self.index))


def match_terms(state: NavState, ms: MatchSet):
    """Residuals ``h``, variances ``R_i`` and pose Jacobians ``(m, 6)`` at ``state``."""
    return kernels.point_plane_terms(ms.points, ms.covs, state.rot, state.trans,
                                     ms.normals, ms.axes, ms.plane_covs)


def residual(state: NavState, match: PlaneMatch) -> float:
    """Signed point-to-plane distance of the transformed sensor point."""
    h, _, _ = match_terms(state, MatchSet.from_matches([match]))
    return float(h[0])


def residual_noise(state: NavState, match: PlaneMatch) -> float:
    """Variance of the residual from plane-parameter and point noise."""
    _, r, _ = match_terms(state, MatchSet.from_matches([match]))
    return float(r[0])


def associate(vmap: VoxelMap, points, covs, state: NavState, gate_sigma: float = 3.0) -> MatchSet:
    """Match sensor points to root planes of the voxels they fall into.

    A match is kept when ``|h| <= gate_sigma * sqrt(R_i + H P Hᵀ)``, with
    ``P`` the pose block of the state covariance.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    covs = np.asarray(covs, dtype=float).reshape(-1, 3, 3)
    if points.shape[0] == 0 or len(vmap) == 0:
        return MatchSet.empty()
    world = state.pose.apply(points)
    mask, roots, planes = vmap.query_planes(world)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return MatchSet.empty()
    sel = [planes[i] for i in idx]
    ms = MatchSet(points[idx], covs[idx],
                  np.array([p.n for p in sel]),
                  np.array([int(p.axis) for p in sel], dtype=np.int64),
                  np.array([p.cov for p in sel]),
                  roots[idx], idx)
    h, r, H = match_terms(state, ms)
    Ppose = state.cov[:6, :6]
    var = r + np.einsum("ni,ij,nj->n", H, Ppose, H)
    keep = np.abs(h) <= gate_sigma * np.sqrt(var)
    return ms.subset(keep)


def _plane_jacobians(state: NavState, ms: MatchSet, h) -> np.ndarray:
    """``∂h/∂n`` for every match at ``state``, ``(m, 3)``."""
    q = ms.points @ state.rot.T + state.trans
    ax = ms.axes
    u = q[np.arange(len(ax)), (ax + 1) % 3]
    v = q[np.arange(len(ax)), (ax + 2) % 3]
    a, b = ms.normals[:, 0], ms.normals[:, 1]
    norm = np.sqrt(a * a + b * b + 1.0)
    return np.column_stack([(u - a * h / norm) / norm, (v - b * h / norm) / norm, 1.0 / norm])


@dataclass(frozen=True)
class _Groups:
    order: np.ndarray
    starts: np.ndarray
    first: np.ndarray

    @classmethod
    def of(cls, roots) -> "_Groups | None":
        if roots is None or len(roots) == 0:
            return None
        order = np.argsort(roots, kind="stable")
        sr = np.asarray(roots)[order]
        starts = np.flatnonzero(np.r_[True, sr[1:] != sr[:-1]])
        return cls(order, starts, order[starts])


def _measurement(x: NavState, ms: MatchSet, groups: "_Groups | None"):
    """Measurement part of the objective with its Gauss-Newton terms.

    Returns ``(cost, G, g)`` with ``G = Hᵀ W H`` and ``g = Hᵀ W h``, or ``None``
    on non-finite residuals. Without ``groups`` ``W = diag(1/R_i)``. With
    groups, matches sharing a root plane share that plane's parameter error,
    which is marginalized per root instead of being counted once per point.
    """
    h, r, H = match_terms(x, ms)
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(r)) and np.all(np.isfinite(H))):
        return None
    if groups is None:
        w = 1.0 / r
        return float(h @ (h * w)), H.T @ (H * w[:, None]), H.T @ (h * w)
    jn = _plane_jacobians(x, ms, h)
    Sn = ms.plane_covs
    w = 1.0 / np.maximum(r - np.einsum("ni,nij,nj->n", jn, Sn, jn), 1e-12)
    cost = float(h @ (h * w))
    G = H.T @ (H * w[:, None])
    g = H.T @ (h * w)
    o = groups.order
    Bw = jn[o] * w[o, None]
    S = np.add.reduceat(np.einsum("ni,nj->nij", Bw, jn[o]), groups.starts, axis=0)
    U = np.add.reduceat(np.einsum("ni,nj->nij", Bw, H[o]), groups.starts, axis=0)
    u = np.add.reduceat(Bw * h[o, None], groups.starts, axis=0)
    Sig = Sn[groups.first]
    # Σ (I + S Σ)⁻¹ stays finite for singular Σ
    K = np.swapaxes(np.linalg.solve(np.swapaxes(np.eye(3) + S @ Sig, 1, 2), Sig), 1, 2)
    cost -= float(np.einsum("ji,jik,jk->", u, K, u))
    G = G - np.einsum("jia,jik,jkb->ab", U, K, U)
    g = g - np.einsum("jia,jik,jk->a", U, K, u)
    return cost, 0.5 * (G + G.T), g


def iekf_update(prior: NavState, matches, max_iters: int = 5, tol: float = 1e-6,
                diag: dict | None = None, shared_plane_noise: bool = True) -> NavState:
    """MAP update of ``prior`` from point-to-plane matches.

    Each iteration relinearizes at the current iterate, solves the Gauss-Newton
    system of the prior-plus-measurement objective, and backtracks if the full
    step would increase it. ``diag`` (if given) receives ``iterations``,
    ``costs`` and ``aborted``. ``shared_plane_noise`` treats the plane error of
    matches with the same root as one shared error (needs ``roots``).
    """
    ms = MatchSet.from_matches(matches)
    info = {"iterations": 0, "costs": [], "aborted": False, "matches": len(ms)}
    if diag is not None:
        diag.update(info)
        info = diag
    if len(ms) == 0:
        return prior
    groups = _Groups.of(ms.roots) if shared_plane_noise else None
    P = prior.cov
    chol = cho_factor(P)
    Ppp = P[:6, :6]
    Pcol = P[:, :6]

    def objective(state):
        m = _measurement(state, ms, groups)
        if m is None:
            return None
        d = state.boxminus(prior)
        return float(d @ cho_solve(chol, d)) + m[0], m

    x = prior
    ev = objective(x)
    if ev is None:
        info["aborted"] = True
        return prior
    cost, (_, G, gvec) = ev
    info["costs"].append(cost)
    for it in range(max_iters):
        info["iterations"] = it + 1
        M = np.linalg.solve(np.eye(6) + G @ Ppp, np.eye(6))
        d0 = x.boxminus(prior)
        # (P⁻¹ + E G Eᵀ)⁻¹ = P − P E (I + G Ppp)⁻¹ G Eᵀ P, applied without forming P⁻¹
        post_g = Pcol @ gvec - Pcol @ (M @ (G @ (Ppp @ gvec)))
        step = -d0 + Pcol @ (M @ (G @ d0[:6])) - post_g
        alpha = 1.0
        accepted = False
        for _ in range(12):
            cand = x.boxplus(alpha * step)
            ev = objective(cand)
            if ev is None:
                info["aborted"] = True
                return prior
            if ev[0] <= cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        x = cand
        cost, (_, G, gvec) = ev
        info["costs"].append(cost)
        if np.linalg.norm(alpha * step) < tol:
            break
    M = np.linalg.solve(np.eye(6) + G @ Ppp, G)
    P_post = P - Pcol @ M @ Pcol.T
    P_post = 0.5 * (P_post + P_post.T)
    return replace(x, cov=P_post)
