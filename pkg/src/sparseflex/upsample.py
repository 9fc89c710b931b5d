"""Voxel subdivision and occupancy-driven pruning."""

from dataclasses import dataclass

import numpy as np

from .grid import PointCloud, build_grid, point_cells

__all__ = ["SubdivisionMap", "subdivide", "gt_occupancy", "self_prune"]


@dataclass(frozen=True, eq=False)
class SubdivisionMap:
    """Parent/child relation produced by :func:`subdivide`.

    ``children[offsets[p]:offsets[p + 1]]`` are the child voxel ids of parent ``p``
    and ``parent[c]`` is the parent of child ``c``.
    """

    factor: int
    parent: np.ndarray
    offsets: np.ndarray
    children: np.ndarray

    def children_of(self, p):
        return self.children[self.offsets[p]:self.offsets[p + 1]]


def subdivide(grid, k):
    """Split every voxel into ``k^3`` children on a ``k * N_r`` lattice."""
    k = int(k)
    if k < 2:
        raise ValueError("subdivision factor must be >= 2")
    fine = grid.resolution * k
    if fine >= 2**21:
        raise OverflowError(f"subdivided resolution {fine} exceeds the lattice limit")
    local = np.stack(np.meshgrid(*[np.arange(k)] * 3, indexing="ij"), -1).reshape(-1, 3)
    coords = (grid.voxels[:, None, :] * k + local[None]).reshape(-1, 3)
    children = build_grid(coords, fine, grid.domain)
    parent = grid.find_voxels(children.voxels // k)
    order = np.argsort(parent, kind="stable")
    offsets = np.concatenate([[0], np.cumsum(np.bincount(parent, minlength=grid.n_voxels))])
    return children, SubdivisionMap(k, parent, offsets, order)


def gt_occupancy(children, pc):
    """Whether each child voxel contains at least one point (half-open cells)."""
    points = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64).reshape(-1, 3)
    occ = np.zeros(children.n_voxels, dtype=bool)
    if len(points) == 0 or children.n_voxels == 0:
        return occ
    ids = children.find_voxels(point_cells(points, children.resolution, children.domain))
    occ[ids[ids >= 0]] = True
    return occ


def self_prune(children, occ):
    """Keep only the occupied voxels."""
    occ = np.asarray(occ, dtype=bool)
    if occ.shape != (children.n_voxels,):
        raise ValueError("occupancy must have one entry per voxel")
    return build_grid(children.voxels[occ], children.resolution, children.domain)
