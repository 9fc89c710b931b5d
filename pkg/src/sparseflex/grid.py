"""Sparse voxel grid with a shared, deduplicated corner table.

Voxels are stored in Morton (Z-order) order and corners are numbered in
first-touch order while sweeping voxels in that order, so every structure
derived from a grid is deterministic regardless of input ordering.

Binary grid file layout (little endian)::

    offset  size        field
    0       8           magic  b"SPFXGRD\\0"
    8       4  uint32   format version (1)
    12      4  uint32   resolution N_r
    16      48 float64  domain lo.xyz, hi.xyz
    64      8  uint64   N_v
    72      12*N_v      voxel coordinates, int32 (i, j, k) rows, Morton order
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_domain, check_points, check_resolution

__all__ = [
    "CORNER_OFFSETS",
    "EDGE_CORNERS",
    "EDGE_AXIS",
    "PointCloud",
    "SparseGrid",
    "build_grid",
    "voxelize_points",
    "point_cells",
    "morton_encode",
    "edge_id",
    "decode_edge",
    "edge_ring",
    "edge_adjacent_voxels",
    "save_grid",
    "load_grid",
]

# local corner c sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1)
CORNER_OFFSETS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64)

# 12 cube edges as (corner_a, corner_b) with corner_b = corner_a + unit step along EDGE_AXIS
EDGE_CORNERS = np.array(
    [
        [0, 1], [2, 3], [4, 5], [6, 7],  # x
        [0, 2], [1, 3], [4, 6], [5, 7],  # y
        [0, 4], [1, 5], [2, 6], [3, 7],  # z
    ],
    dtype=np.int64,
)
EDGE_AXIS = np.repeat(np.arange(3), 4)

# cells around a lattice edge, as (du, dw) offsets in the plane orthogonal to the
# edge axis a, with (u, w) = ((a + 1) % 3, (a + 2) % 3); counter-clockwise about +a
_RING_OFFSETS = np.array([[-1, -1], [0, -1], [0, 0], [-1, 0]], dtype=np.int64)

_MAGIC = b"SPFXGRD\0"
_VERSION = 1


def _spread_bits(v):
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_encode(coords):
    """Interleave the bits of ``(i, j, k)`` rows (21 bits per axis) into uint64 codes."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    return (
        _spread_bits(coords[:, 0])
        | (_spread_bits(coords[:, 1]) << np.uint64(1))
        | (_spread_bits(coords[:, 2]) << np.uint64(2))
    )


def _linear_key(coords, n):
    coords = np.asarray(coords, dtype=np.int64)
    return (coords[..., 0] * n + coords[..., 1]) * n + coords[..., 2]


@dataclass(frozen=True)
class PointCloud:
    """Surface samples with optional unit normals."""

    points: np.ndarray
    normals: np.ndarray = None

    def __post_init__(self):
        points = check_points(self.points)
        object.__setattr__(self, "points", points)
        if self.normals is not None:
            normals = check_points(self.normals, "normals")
            if normals.shape != points.shape:
                raise ValueError("normals must match points in shape")
            if len(normals) and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > 1e-6:
                raise ValueError("normals must have unit length")
            object.__setattr__(self, "normals", normals)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class SparseGrid:
    """Immutable sparse voxel set on an ``N_r^3`` lattice over an axis-aligned box.

    Build instances with :func:`build_grid`; the constructor trusts its inputs.

    Attributes
    ----------
    resolution : int
        Cells per axis.
    domain : ndarray of shape (2, 3)
        ``[lo, hi]`` corners of the world-space box.
    voxels : ndarray of shape (N_v, 3)
        Integer voxel coordinates in Morton order.
    corners : ndarray of shape (N_c, 3)
        Lattice coordinates of the deduplicated corners.
    voxel_corners : ndarray of shape (N_v, 8)
        Corner ids of each voxel, local corner order given by ``CORNER_OFFSETS``.
    """

    resolution: int
    domain: np.ndarray
    voxels: np.ndarray
    corners: np.ndarray
    voxel_corners: np.ndarray
    _voxel_keys: np.ndarray = field(repr=False)
    _voxel_perm: np.ndarray = field(repr=False)
    _corner_keys: np.ndarray = field(repr=False)
    _corner_perm: np.ndarray = field(repr=False)

    @property
    def n_voxels(self):
        return len(self.voxels)

    @property
    def n_corners(self):
        return len(self.corners)

    @property
    def cell_size(self):
        return (self.domain[1] - self.domain[0]) / self.resolution

    def voxel_centers(self, ids=None):
        v = self.voxels if ids is None else self.voxels[ids]
        return self.domain[0] + (v + 0.5) * self.cell_size

    def corner_positions(self, ids=None):
        c = self.corners if ids is None else self.corners[ids]
        return self.domain[0] + c * self.cell_size

    def find_voxels(self, coords):
        """Voxel ids for integer coordinates, ``-1`` where absent or out of range."""
        return self._lookup(coords, self.resolution, self._voxel_keys, self._voxel_perm)

    def find_corners(self, coords):
        """Corner ids for lattice coordinates, ``-1`` where absent or out of range."""
        return self._lookup(coords, self.resolution + 1, self._corner_keys, self._corner_perm)

    @staticmethod
    def _lookup(coords, n, keys, perm):
        coords = np.asarray(coords, dtype=np.int64)
        shape = coords.shape[:-1]
        coords = coords.reshape(-1, 3)
        out = np.full(len(coords), -1, dtype=np.int64)
        valid = np.all((coords >= 0) & (coords < n), axis=1)
        if len(keys) and valid.any():
            q = _linear_key(coords[valid], n)
            pos = np.searchsorted(keys, q)
            pos = np.minimum(pos, len(keys) - 1)
            hit = keys[pos] == q
            found = np.full(len(q), -1, dtype=np.int64)
            found[hit] = perm[pos[hit]]
            out[valid] = found
        return out.reshape(shape)

    def unique_edges(self):
        """All lattice edges touched by the grid as ``(lower corner id, axis)`` pairs, sorted by edge id."""
        ca = self.voxel_corners[:, EDGE_CORNERS[:, 0]].ravel()
        axis = np.tile(EDGE_AXIS, self.n_voxels)
        eid = edge_id(self.corners[ca], axis, self.resolution)
        _, first = np.unique(eid, return_index=True)
        cb = self.voxel_corners[:, EDGE_CORNERS[:, 1]].ravel()
        return ca[first], cb[first], axis[first]


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def build_grid(coords, resolution, domain=None):
    """Build a :class:`SparseGrid` from voxel coordinates.

    Duplicates are removed, voxels are sorted by Morton code and corners are
    numbered in first-touch order of that sweep.
    """
    n = check_resolution(resolution)
    box = check_domain(domain)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if len(coords) and (coords.min() < 0 or coords.max() >= n):
        raise ValueError(f"voxel coordinates must lie in [0, {n})")

    codes = morton_encode(coords)
    _, first = np.unique(codes, return_index=True)
    voxels = coords[first]

    all_corners = (voxels[:, None, :] + CORNER_OFFSETS[None]).reshape(-1, 3)
    ckeys = _linear_key(all_corners, n + 1)
    uniq, first_seen, inverse = np.unique(ckeys, return_index=True, return_inverse=True)
    order = np.argsort(first_seen, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    voxel_corners = rank[inverse.ravel()].reshape(-1, 8)
    corners = all_corners[first_seen[order]]

    vkeys = _linear_key(voxels, n)
    vperm = np.argsort(vkeys, kind="stable")
    voxels = np.ascontiguousarray(voxels)
    arrays = (voxels, corners, voxel_corners, vkeys[vperm], vperm, uniq, rank)
    _freeze(box, *arrays)
    return SparseGrid(n, box, voxels, corners, voxel_corners, vkeys[vperm], vperm, uniq, rank)


def point_cells(points, resolution, domain=None):
    """Half-open cell index of every point, with points on the max face clamped into the last cell."""
    n = check_resolution(resolution)
    box = check_domain(domain)
    points = check_points(points)
    if len(points) and (np.any(points < box[0]) or np.any(points > box[1])):
        raise ValueError("point outside the grid domain")
    cell = (box[1] - box[0]) / n
    idx = np.floor((points - box[0]) / cell).astype(np.int64)
    # correct one-ulp disagreements with the literal cell bounds
    idx -= points < box[0] + idx * cell
    idx += points >= box[0] + (idx + 1) * cell
    return np.clip(idx, 0, n - 1)


def voxelize_points(pc, resolution, domain=None, margin=0.0):
    """Voxels containing at least one point of ``pc``.

    Parameters
    ----------
    pc : PointCloud or array of shape (n, 3)
    resolution : int
    domain : box, optional
        Defaults to ``[-1, 1]^3``.
    margin : float, optional
        Dilation in cell units. With ``margin > 0`` a voxel is also kept when a
        point lies within ``margin`` cells of its box (per axis). ``0`` gives
        strict half-open membership.
    """
    points = pc.points if isinstance(pc, PointCloud) else check_points(pc)
    n = check_resolution(resolution)
    box = check_domain(domain)
    idx = point_cells(points, n, box)
    if margin > 0 and len(points):
        cell = (box[1] - box[0]) / n
        f = (points - box[0]) / cell
        lo = np.clip(np.floor(f - margin).astype(np.int64), 0, n - 1)
        hi = np.clip(np.floor(f + margin).astype(np.int64), 0, n - 1)
        reach = int(np.ceil(margin))
        parts = []
        for off in np.stack(np.meshgrid(*[np.arange(-reach, reach + 1)] * 3, indexing="ij"), -1).reshape(-1, 3):
            cand = idx + off
            ok = np.all((cand >= lo) & (cand <= hi), axis=1)
            parts.append(cand[ok])
        idx = np.concatenate(parts)
    if len(idx):
        idx = np.unique(idx, axis=0)
    return build_grid(idx, n, box)


def edge_id(corner_coords, axis, resolution):
    """Lattice edge id from its lower corner coordinate and axis."""
    return _linear_key(corner_coords, resolution + 1) * 3 + np.asarray(axis, dtype=np.int64)


def decode_edge(eid, resolution):
    """Inverse of :func:`edge_id`; returns ``(corner_coords, axis)``."""
    eid = np.asarray(eid, dtype=np.int64)
    n1 = resolution + 1
    key, axis = np.divmod(eid, 3)
    i, rem = np.divmod(key, n1 * n1)
    j, k = np.divmod(rem, n1)
    return np.stack([i, j, k], axis=-1), axis


def edge_ring(grid, corner_coords, axis):
    """Voxel ids of the four cells around each lattice edge in canonical order (``-1`` if absent).

    Returns an ``(E, 4)`` array. Order is counter-clockwise about the edge
    direction, starting from the cell at offset ``(-1, -1)`` in the ``(u, w)``
    plane.
    """
    corner_coords = np.asarray(corner_coords, dtype=np.int64).reshape(-1, 3)
    axis = np.broadcast_to(np.asarray(axis, dtype=np.int64), (len(corner_coords),))
    u = (axis + 1) % 3
    w = (axis + 2) % 3
    rows = np.arange(len(corner_coords))
    cells = np.repeat(corner_coords[:, None, :], 4, axis=1)
    for r, (du, dw) in enumerate(_RING_OFFSETS):
        cells[rows, r, u] += du
        cells[rows, r, w] += dw
    return grid.find_voxels(cells)


def edge_adjacent_voxels(grid, eid):
    """Voxels of ``grid`` sharing lattice edge ``eid``, in canonical rotational order."""
    n = grid.resolution
    if int(eid) != eid or eid < 0 or eid >= 3 * (n + 1) ** 3:
        raise ValueError(f"malformed edge id {eid!r}")
    coords, axis = decode_edge(int(eid), n)
    if coords[axis] >= n:
        raise ValueError(f"edge {eid} leaves the lattice")
    ring = edge_ring(grid, coords[None], axis)[0]
    return [int(v) for v in ring if v >= 0]


def save_grid(grid, path):
    header = struct.pack(
        "<8sII6dQ", _MAGIC, _VERSION, grid.resolution, *grid.domain[0], *grid.domain[1], grid.n_voxels
    )
    body = np.ascontiguousarray(grid.voxels, dtype="<i4").tobytes()
    Path(path).write_bytes(header + body)


def load_grid(path):
    data = Path(path).read_bytes()
    size = struct.calcsize("<8sII6dQ")
    if len(data) < size:
        raise ValueError(f"{path}: truncated grid header")
    magic, version, n, *rest = struct.unpack_from("<8sII6dQ", data)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a grid file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported grid version {version}")
    box, nv = np.array(rest[:6]).reshape(2, 3), rest[6]
    if len(data) != size + 12 * nv:
        raise ValueError(f"{path}: expected {nv} voxels, file size mismatch")
    voxels = np.frombuffer(data, dtype="<i4", offset=size).reshape(nv, 3)
    return build_grid(voxels.astype(np.int64), n, box)
