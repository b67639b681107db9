"""Spatial-hash voxel map whose cells are union-find nodes over plane fits.

Each cell moves through ``ACCUMULATING -> CONVERGED -> MERGED``. An
accumulating cell retains its points and refits after every scan; once it
holds ``max_points`` it freezes its plane, discards the points, and is
handed to :func:`mergemap.merge.merge_converged`. Merged cells keep only a
parent key.

Keys are packed into one integer (21 bits per axis, offset binary) so the
hash map, lookups and neighbor arithmetic stay cheap.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .geometry import CovPoint
from .plane import (DegenerateFit, FitAccumulator, MainAxis, PlaneFit, PlaneFitConfig,
                    _argmin_axis, _planarity, _solve_local, _to_world, plane_cov)

_BITS = 21
_OFFSET = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1
KEY_LIMIT = _OFFSET - 1

# bytes per float/int in the footprint model
_WORD = 8
PLANE_BYTES = (3 + 9 + 2) * _WORD      # n, Σn, axis, point count
POINT_BYTES = (3 + 9) * _WORD          # position and covariance
ACC_BYTES = (1 + 3 + 6 + 3) * _WORD    # count, first and second moments, anchor
META_BYTES = (1 + 1 + 1) * _WORD       # packed key, state, kid count
PARENT_BYTES = _WORD


class VoxelKey(NamedTuple):
    ix: int
    iy: int
    iz: int


def pack_key(ix: int, iy: int, iz: int) -> int:
    return ((ix + _OFFSET) << (2 * _BITS)) | ((iy + _OFFSET) << _BITS) | (iz + _OFFSET)


def unpack_key(k: int) -> VoxelKey:
    return VoxelKey(((k >> (2 * _BITS)) & _MASK) - _OFFSET,
                    ((k >> _BITS) & _MASK) - _OFFSET,
                    (k & _MASK) - _OFFSET)


def pack_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    if keys.size and np.abs(keys).max() > KEY_LIMIT:
        raise ValueError("point lies outside the addressable voxel range")
    k = keys + _OFFSET
    return (k[:, 0] << (2 * _BITS)) | (k[:, 1] << _BITS) | k[:, 2]


def voxel_key(p, size: float) -> VoxelKey:
    """Half-open cell ``[k*size, (k+1)*size)`` containing ``p``."""
    k = np.floor(np.asarray(p, dtype=float) / size).astype(np.int64)
    return VoxelKey(int(k[0]), int(k[1]), int(k[2]))


FACE6 = tuple((dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
              if abs(dx) + abs(dy) + abs(dz) == 1)
FULL26 = tuple((dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
               if (dx, dy, dz) != (0, 0, 0))


def neighbor_offsets(offsets) -> tuple[int, ...]:
    return tuple((dx << (2 * _BITS)) + (dy << _BITS) + dz for dx, dy, dz in offsets)


class CellState(enum.IntEnum):
    ACCUMULATING = 0
    CONVERGED = 1
    MERGED = 2


class VoxelCell:
    """Hash-map value. ``plane`` is ``None`` for merged and non-planar cells."""

    __slots__ = ("state", "plane", "acc", "pts", "covs", "parent", "kids", "planar")

    def __init__(self, acc: FitAccumulator):
        self.state = CellState.ACCUMULATING
        self.plane: PlaneFit | None = None
        self.acc: FitAccumulator | None = acc
        self.pts: np.ndarray | None = np.zeros((0, 3))
        self.covs: np.ndarray | None = np.zeros((0, 3, 3))
        self.parent: int | None = None
        self.kids: list[int] | None = None
        self.planar = False

    @property
    def n_points(self) -> int:
        if self.acc is not None:
            return self.acc.n_points
        return self.plane.n_points if self.plane is not None else 0

    @property
    def kid_count(self) -> int:
        return len(self.kids) if self.kids else 0

    def footprint(self) -> dict[str, int]:
        plane = PLANE_BYTES if self.plane is not None else 0
        points = POINT_BYTES * (0 if self.pts is None else self.pts.shape[0])
        acc = ACC_BYTES if self.acc is not None else 0
        meta = META_BYTES + (PARENT_BYTES if self.parent is not None else 0) + _WORD * self.kid_count
        return {"plane": plane, "points": points, "accumulator": acc, "meta": meta}


@dataclass(frozen=True)
class VoxelMapConfig:
    voxel_size: float = 0.5
    max_points: int = 50
    fit: PlaneFitConfig = field(default_factory=PlaneFitConfig)

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        if self.max_points < self.fit.min_fit_points:
            raise ValueError("max_points must be at least min_fit_points")


class VoxelMap:
    def __init__(self, cfg: VoxelMapConfig = VoxelMapConfig()):
        self.cfg = cfg
        self.cells: dict[int, VoxelCell] = {}

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, key) -> bool:
        return pack_key(*key) in self.cells

    def cell(self, key) -> VoxelCell:
        return self.cells[pack_key(*key)]

    def packed_keys(self, points) -> np.ndarray:
        return pack_keys(kernels.voxel_keys(points, self.cfg.voxel_size))

    # -- insertion --------------------------------------------------------

    def insert_scan(self, points, covs=None) -> list[VoxelKey]:
        """Insert world-frame points; return keys that converged in this call."""
        if covs is None:
            covs = np.array([p.cov for p in points]).reshape(-1, 3, 3)
            points = np.array([p.pos for p in points]).reshape(-1, 3)
        points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
        covs = np.ascontiguousarray(covs, dtype=float).reshape(-1, 3, 3)
        if points.shape[0] == 0:
            return []
        packed = self.packed_keys(points)
        order = np.argsort(packed, kind="stable")
        sk = packed[order]
        starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
        ends = np.r_[starts[1:], sk.size]
        converged = []
        size = self.cfg.voxel_size
        for s, e in zip(starts.tolist(), ends.tolist()):
            k = int(sk[s])
            cell = self.cells.get(k)
            if cell is None:
                center = (np.array(unpack_key(k), dtype=float) + 0.5) * size
                cell = VoxelCell(FitAccumulator(MainAxis.Z, center))
                self.cells[k] = cell
            elif cell.state is not CellState.ACCUMULATING:
                continue
            idx = order[s:e]
            if self._update_cell(cell, points[idx], covs[idx]):
                converged.append(k)
        return [unpack_key(k) for k in converged]

    def _update_cell(self, cell: VoxelCell, pts, covs) -> bool:
        cell.acc.add_batch(pts)
        cell.pts = np.concatenate([cell.pts, pts]) if cell.pts.size else pts.copy()
        cell.covs = np.concatenate([cell.covs, covs]) if cell.covs.size else covs.copy()
        self._refit(cell)
        if cell.acc.n_points < self.cfg.max_points:
            return False
        cell.state = CellState.CONVERGED
        cell.acc = None
        cell.pts = None
        cell.covs = None
        if cell.planar:
            cell.plane.freeze()
            cell.kids = []
            return True
        cell.plane = None
        return False

    def _refit(self, cell: VoxelCell) -> None:
        fit = self.cfg.fit
        acc = cell.acc
        cell.planar = False
        cell.plane = None
        if acc.n_points < fit.min_fit_points:
            return
        if not _planarity(acc.covariance(), fit).is_plane:
            return
        axis = _argmin_axis(acc.world_variances())
        if axis != acc.axis:
            acc = cell.acc = acc.with_axis(axis)
        try:
            n_local, _ = _solve_local(acc, fit.degenerate_tol)
        except DegenerateFit:
            return
        n = _to_world(n_local, acc)
        cov = plane_cov(cell.pts, acc, n, cell.covs)
        cell.plane = PlaneFit(n, axis, cov, acc.n_points, cell.pts, cell.covs)
        cell.planar = True

    # -- lookup -----------------------------------------------------------

    def find_root(self, key) -> VoxelKey:
        return unpack_key(self._root(pack_key(*key)))

    def _root(self, k: int) -> int:
        cell = self.cells[k]
        while cell.state is CellState.MERGED:
            k = cell.parent
            cell = self.cells[k]
        return k

    def _root_plane(self, k: int):
        cell = self.cells.get(k)
        if cell is None:
            return None, k
        if cell.state is CellState.MERGED:
            k = cell.parent
            cell = self.cells[k]
        if cell.state is CellState.CONVERGED and cell.plane is not None:
            return cell.plane, k
        return None, k

    def query_plane(self, p) -> tuple[PlaneFit, VoxelKey] | None:
        """Root plane for the voxel containing ``p``, if it has a converged one."""
        key = voxel_key(p, self.cfg.voxel_size)
        plane, root = self._root_plane(pack_key(*key))
        if plane is None:
            return None
        return plane, unpack_key(root)

    def query_planes(self, points):
        """Batched lookup: returns ``(mask, root_keys, planes)`` for ``(N, 3)`` points."""
        packed = self.packed_keys(points).tolist()
        mask = np.zeros(len(packed), dtype=bool)
        roots = np.zeros(len(packed), dtype=np.int64)
        planes = [None] * len(packed)
        get = self._root_plane
        for i, k in enumerate(packed):
            plane, root = get(k)
            if plane is not None:
                mask[i] = True
                roots[i] = root
                planes[i] = plane
        return mask, roots, planes

    # -- accounting -------------------------------------------------------

    def roots(self) -> list[VoxelKey]:
        return [unpack_key(k) for k, c in self.cells.items()
                if c.state is CellState.CONVERGED and c.plane is not None]

    def footprint(self) -> dict[str, int]:
        tot = {"plane": 0, "points": 0, "accumulator": 0, "meta": 0}
        for c in self.cells.values():
            for name, v in c.footprint().items():
                tot[name] += v
        tot["total"] = sum(tot.values())
        return tot

    def stats(self) -> dict:
        counts = {s.name.lower(): 0 for s in CellState}
        nonplanar = 0
        for c in self.cells.values():
            counts[c.state.name.lower()] += 1
            if c.state is CellState.CONVERGED and c.plane is None:
                nonplanar += 1
        fp = self.footprint()
        return {
            "cells": len(self.cells),
            "accumulating": counts["accumulating"],
            "converged": counts["converged"],
            "merged": counts["merged"],
            "nonplanar": nonplanar,
            "roots": counts["converged"] - nonplanar,
            "plane_bytes": fp["plane"],
            "point_bytes": fp["points"],
            "total_bytes": fp["total"],
        }

    def stats_report(self) -> str:
        return json.dumps(self.stats(), sort_keys=True)
