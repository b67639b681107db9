"""Union-find merging of converged voxel planes into shared father planes."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .plane import PlaneFit
from .voxel_map import (FACE6, FULL26, PLANE_BYTES, CellState, VoxelKey, VoxelMap,
                        neighbor_offsets, pack_key)

CHI2_3DOF_95 = 7.814727903251178
_REG_EPS = 1e-12


class NeighborSet(enum.Enum):
    FACE6 = "face6"
    FULL26 = "full26"


@dataclass(frozen=True)
class MergeConfig:
    chi2_threshold: float = CHI2_3DOF_95
    neighbor_set: NeighborSet = NeighborSet.FACE6
    require_same_axis: bool = True

    def __post_init__(self):
        if not self.chi2_threshold > 0:
            raise ValueError("chi2_threshold must be positive")
        object.__setattr__(self, "neighbor_set", NeighborSet(self.neighbor_set))


@dataclass
class MergeReport:
    pairs_tested: int = 0
    pairs_merged: int = 0
    roots_before: int = 0
    roots_after: int = 0
    bytes_freed: int = 0
    regularized: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def mahalanobis(p1: PlaneFit, p2: PlaneFit, with_flag: bool = False):
    """Squared Mahalanobis distance between two plane parameter vectors.

    A singular ``Σ1 + Σ2`` is regularized with ``1e-12 I``; pass
    ``with_flag=True`` to also learn whether that happened.
    """
    if p1.axis != p2.axis:
        raise ValueError("planes with different main axes are not comparable")
    dn = np.asarray(p1.n, dtype=float) - np.asarray(p2.n, dtype=float)
    S = np.asarray(p1.cov, dtype=float) + np.asarray(p2.cov, dtype=float)
    S = 0.5 * (S + S.T)
    flagged = False
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        flagged = True
        L = np.linalg.cholesky(S + _REG_EPS * np.eye(3))
    y = np.linalg.solve(L, dn)
    gamma = float(y @ y)
    return (gamma, flagged) if with_flag else gamma


def fuse(p1: PlaneFit, p2: PlaneFit) -> PlaneFit:
    """Trace-weighted average of two plane estimates."""
    if p1.axis != p2.axis:
        raise ValueError("planes with different main axes cannot be fused")
    t1 = float(np.trace(p1.cov))
    t2 = float(np.trace(p2.cov))
    s = t1 + t2
    if s == 0.0:
        return PlaneFit(np.array(p1.n, dtype=float), p1.axis, np.array(p1.cov, dtype=float),
                        p1.n_points, converged=True)
    if t1 == t2:
        return PlaneFit(0.5 * (np.asarray(p1.n) + np.asarray(p2.n)), p1.axis,
                        0.25 * (np.asarray(p1.cov) + np.asarray(p2.cov)),
                        p1.n_points + p2.n_points, converged=True)
    n = (t2 * np.asarray(p1.n) + t1 * np.asarray(p2.n)) / s
    cov = (t2 * t2 * np.asarray(p1.cov) + t1 * t1 * np.asarray(p2.cov)) / (s * s)
    return PlaneFit(n, p1.axis, cov, p1.n_points + p2.n_points, converged=True)


def find_root(vmap: VoxelMap, key) -> VoxelKey:
    return vmap.find_root(key)


def _attach(vmap: VoxelMap, survivor: int, loser: int) -> int:
    """Hang ``loser`` and all its kids directly under ``survivor``."""
    cells = vmap.cells
    s = cells[survivor]
    lc = cells[loser]
    moved = lc.kids or []
    for kid in moved:
        cells[kid].parent = survivor
    s.kids.extend(moved)
    s.kids.append(loser)
    lc.kids = None
    lc.state = CellState.MERGED
    lc.parent = survivor
    freed = PLANE_BYTES if lc.plane is not None else 0
    lc.plane = None
    return freed


def merge_converged(vmap: VoxelMap, S, cfg: MergeConfig = MergeConfig()) -> MergeReport:
    """Merge newly converged planes ``S`` with their neighbors' root planes.

    Sweeps ``S`` repeatedly until a sweep merges nothing, so a second call on
    the same input is a no-op.
    """
    cells = vmap.cells
    offsets = neighbor_offsets(FACE6 if cfg.neighbor_set is NeighborSet.FACE6 else FULL26)
    report = MergeReport()
    report.roots_before = sum(1 for c in cells.values()
                              if c.state is CellState.CONVERGED and c.plane is not None)
    keys = []
    for key in S:
        k = pack_key(*key)
        c = cells[k]
        if c.state is CellState.ACCUMULATING:
            raise ValueError(f"voxel {tuple(key)} has not converged")
        if c.plane is not None or c.state is CellState.MERGED:
            keys.append(k)

    changed = True
    while changed:
        changed = False
        for k in keys:
            for off in offsets:
                nb = cells.get(k + off)
                if nb is None or nb.state is CellState.ACCUMULATING:
                    continue
                rk = vmap._root(k)
                rn = vmap._root(k + off)
                if rk == rn:
                    continue
                ck, cn = cells[rk], cells[rn]
                if ck.plane is None or cn.plane is None:
                    continue
                pk, pn = ck.plane, cn.plane
                if pk.axis != pn.axis:
                    if cfg.require_same_axis:
                        continue
                    pn = pn.reparameterized(pk.axis)
                    if pn is None:
                        continue
                report.pairs_tested += 1
                gamma, flagged = mahalanobis(pk, pn, with_flag=True)
                report.regularized += int(flagged)
                if not gamma < cfg.chi2_threshold:
                    continue
                fused = fuse(pk, pn)
                if not cn.kids:
                    # a lone neighbor joins the new plane's father
                    survivor, loser = rk, rn
                elif len(ck.kids) > len(cn.kids):
                    survivor, loser = rk, rn
                else:
                    survivor, loser = rn, rk
                report.bytes_freed += _attach(vmap, survivor, loser)
                cells[survivor].plane = fused
                report.pairs_merged += 1
                changed = True
    report.roots_after = sum(1 for c in cells.values()
                             if c.state is CellState.CONVERGED and c.plane is not None)
    return report
