"""Trajectory error metrics."""
from __future__ import annotations

import numpy as np

MAX_DT = 0.01


class EvaluationError(ValueError):
    pass


def _positions(traj):
    t = np.array([float(r[0]) for r in traj])
    p = np.array([np.asarray(r[1].trans, dtype=float) for r in traj]).reshape(-1, 3)
    return t, p


def associate_times(t_est, t_gt, max_dt: float = MAX_DT):
    """Index pairs ``(i_est, i_gt)`` of nearest timestamps within ``max_dt``."""
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    if t_gt.size == 0 or t_est.size == 0:
        return np.zeros(0, int), np.zeros(0, int)
    order = np.argsort(t_gt, kind="stable")
    ts = t_gt[order]
    j = np.clip(np.searchsorted(ts, t_est), 1, ts.size - 1) if ts.size > 1 else np.zeros(t_est.size, int)
    if ts.size > 1:
        left = np.abs(t_est - ts[j - 1]) <= np.abs(ts[j] - t_est)
        j = np.where(left, j - 1, j)
    ok = np.abs(ts[j] - t_est) <= max_dt
    return np.flatnonzero(ok), order[j[ok]]


def rigid_align(src, dst):
    """Least-squares ``R, t`` with ``dst ≈ R src + t`` (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    C = (dst - md).T @ (src - ms)
    U, _, Vt = np.linalg.svd(C)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ D @ Vt
    return R, md - R @ ms


def compute_ate(est, gt, align: bool = True, max_dt: float = MAX_DT) -> float:
    """Translational RMSE between associated poses, optionally after rigid alignment."""
    te, pe = _positions(est)
    tg, pg = _positions(gt)
    ie, ig = associate_times(te, tg, max_dt)
    if ie.size < 2:
        raise EvaluationError(f"only {ie.size} poses could be associated within {max_dt} s")
    a, b = pe[ie], pg[ig]
    if align:
        R, t = rigid_align(a, b)
        a = a @ R.T + t
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def end_to_end_error(est) -> float:
    """Distance between the first and last estimated positions."""
    if len(est) < 2:
        raise EvaluationError("need at least two poses")
    _, p = _positions(est)
    return float(np.linalg.norm(p[-1] - p[0]))


def path_length(traj) -> float:
    _, p = _positions(traj)
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1))) if len(p) > 1 else 0.0
