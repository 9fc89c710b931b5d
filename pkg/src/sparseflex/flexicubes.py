"""Differentiable dual marching cubes on a sparse grid (Flexicubes weighting).

Every active voxel whose corner signs are mixed gets one dual vertex, the
beta-weighted mean of its edge crossing points. Crossing points use
alpha-weighted interpolation between deformed corner positions. Every lattice
edge with a sign change whose four surrounding voxels are present and active
emits a quad, split along the diagonal between the first and third ring voxel.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import ContractError, check_faces, check_points
from .grid import EDGE_AXIS, EDGE_CORNERS, edge_id, edge_ring

__all__ = [
    "FlexParams",
    "ParamGradients",
    "TriangleMesh",
    "edge_crossing",
    "extract",
    "extract_backward",
    "clamp_params",
    "save_params",
    "load_params",
]


@dataclass
class TriangleMesh:
    """Triangle soup with optional extraction provenance.

    ``face_provenance`` holds the generating lattice edge id of each face and
    ``vertex_provenance`` the generating voxel id of each vertex; both are
    ``None`` for meshes that did not come from :func:`extract`.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    face_provenance: np.ndarray = None
    vertex_provenance: np.ndarray = None

    def __post_init__(self):
        self.vertices = check_points(self.vertices, "vertices")
        self.triangles = check_faces(self.triangles, len(self.vertices), "triangles")
        t = self.triangles
        if len(t) and np.any((t[:, 0] == t[:, 1]) & (t[:, 1] == t[:, 2])):
            raise ValueError("degenerate triangle with three identical vertex ids")
        if self.face_provenance is not None:
            self.face_provenance = np.asarray(self.face_provenance, dtype=np.int64)
            if self.face_provenance.shape != (len(t),):
                raise ValueError("face_provenance must have one entry per triangle")
        if self.vertex_provenance is not None:
            self.vertex_provenance = np.asarray(self.vertex_provenance, dtype=np.int64)
            if self.vertex_provenance.shape != (len(self.vertices),):
                raise ValueError("vertex_provenance must have one entry per vertex")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.triangles)

    def face_areas(self):
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def face_normals(self):
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    def select_faces(self, mask):
        """Sub-mesh of the selected faces; vertices are kept as is."""
        mask = np.asarray(mask)
        prov = None if self.face_provenance is None else self.face_provenance[mask]
        return TriangleMesh(self.vertices, self.triangles[mask], prov, self.vertex_provenance)


@dataclass
class FlexParams:
    """Per-corner SDF ``s`` and deformation ``delta``; per-voxel weights ``alpha`` (8) and ``beta`` (12)."""

    s: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def default(cls, grid, s=None):
        s = np.zeros(grid.n_corners) if s is None else np.asarray(s, dtype=np.float64)
        return cls(
            s=s,
            delta=np.zeros((grid.n_corners, 3)),
            alpha=np.ones((grid.n_voxels, 8)),
            beta=np.ones((grid.n_voxels, 12)),
        )

    def copy(self):
        return FlexParams(self.s.copy(), self.delta.copy(), self.alpha.copy(), self.beta.copy())

    def check(self, grid):
        nc, nv = grid.n_corners, grid.n_voxels
        expected = {"s": (nc,), "delta": (nc, 3), "alpha": (nv, 8), "beta": (nv, 12)}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if np.shape(arr) != shape:
                raise ValueError(f"{name} has shape {np.shape(arr)}, grid expects {shape}")
        if not np.all(np.isfinite(self.s)) or not np.all(np.isfinite(self.delta)):
            raise ValueError("s and delta must be finite")
        if np.any(self.alpha <= 0) or np.any(self.beta <= 0):
            raise ValueError("alpha and beta must be strictly positive")


@dataclass
class ParamGradients:
    d_s: np.ndarray
    d_delta: np.ndarray
    d_alpha: np.ndarray
    d_beta: np.ndarray

    @classmethod
    def zeros_like(cls, params):
        return cls(
            np.zeros_like(params.s),
            np.zeros_like(params.delta),
            np.zeros_like(params.alpha),
            np.zeros_like(params.beta),
        )

    def add_(self, other, scale=1.0):
        self.d_s += scale * other.d_s
        self.d_delta += scale * other.d_delta
        self.d_alpha += scale * other.d_alpha
        self.d_beta += scale * other.d_beta
        return self


def edge_crossing(p_a, p_b, s_a, s_b, alpha_a=1.0, alpha_b=1.0):
    """Alpha-weighted zero crossing between two corners of opposite sign."""
    if (s_a < 0) == (s_b < 0):
        raise ContractError("edge_crossing needs corner values of opposite sign")
    a = alpha_a * s_a
    b = alpha_b * s_b
    t = a / (a - b)
    p_a = np.asarray(p_a, dtype=np.float64)
    return p_a + t * (np.asarray(p_b, dtype=np.float64) - p_a)


def _crossings(grid, params, vids):
    """Per-voxel edge crossing data for voxels ``vids`` (all assumed mixed)."""
    vc = grid.voxel_corners[vids]
    s = params.s[vc]
    pos = grid.corner_positions(vc) + params.delta[vc]
    ia, ib = EDGE_CORNERS[:, 0], EDGE_CORNERS[:, 1]
    sa, sb = s[:, ia], s[:, ib]
    cross = (sa < 0) != (sb < 0)
    al = params.alpha[vids]
    aa, ab = al[:, ia], al[:, ib]
    A, B = aa * sa, ab * sb
    denom = np.where(cross, A - B, 1.0)
    t = np.where(cross, A / denom, 0.0)
    pa, pb = pos[:, ia], pos[:, ib]
    x = pa + t[..., None] * (pb - pa)
    w = np.where(cross, params.beta[vids], 0.0)
    wsum = w.sum(axis=1)
    v = np.einsum("me,mei->mi", w, x) / wsum[:, None]
    return dict(vc=vc, sa=sa, sb=sb, aa=aa, ab=ab, A=A, B=B, denom=denom, t=t,
                pa=pa, pb=pb, x=x, w=w, wsum=wsum, cross=cross, v=v)


def _active_mask(grid, active):
    if active is None:
        return np.ones(grid.n_voxels, dtype=bool)
    active = np.asarray(active)
    if active.dtype == bool:
        if active.shape != (grid.n_voxels,):
            raise ValueError("boolean active mask must have one entry per voxel")
        return active
    mask = np.zeros(grid.n_voxels, dtype=bool)
    ids = active.astype(np.int64).ravel()
    if len(ids) and (ids.min() < 0 or ids.max() >= grid.n_voxels):
        raise ValueError("active voxel id out of range")
    mask[ids] = True
    return mask


def extract(grid, params, active=None):
    """Extract the isosurface of ``params`` on ``grid``.

    Parameters
    ----------
    grid : SparseGrid
    params : FlexParams
    active : array of voxel ids or boolean mask, optional
        Restrict extraction to a voxel subset (sectional extraction). Faces are
        only emitted when all four voxels around their edge are active.

    Returns
    -------
    TriangleMesh
        Faces sorted by generating edge id, two triangles per edge; vertices in
        Morton order of their voxels.
    """
    params.check(grid)
    act = _active_mask(grid, active)
    act_ids = np.flatnonzero(act)
    neg = params.s < 0
    nneg = neg[grid.voxel_corners[act_ids]].sum(axis=1)
    vids = act_ids[(nneg > 0) & (nneg < 8)]
    if len(vids) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64),
                            np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    c = _crossings(grid, params, vids)
    vert_of_voxel = np.full(grid.n_voxels, -1, dtype=np.int64)
    vert_of_voxel[vids] = np.arange(len(vids))

    lower = c["vc"][:, EDGE_CORNERS[:, 0]][c["cross"]]
    axis = np.broadcast_to(EDGE_AXIS, c["cross"].shape)[c["cross"]]
    eids, first = np.unique(edge_id(grid.corners[lower], axis, grid.resolution), return_index=True)
    lower, axis = lower[first], axis[first]
    ring = edge_ring(grid, grid.corners[lower], axis)
    ok = np.all(ring >= 0, axis=1)
    ok[ok] = np.all(act[ring[ok]], axis=1)
    eids, lower, ring = eids[ok], lower[ok], ring[ok]
    q = vert_of_voxel[ring]
    flip = ~neg[lower]
    q[flip] = q[flip][:, [0, 3, 2, 1]]
    tris = np.stack([q[:, [0, 1, 2]], q[:, [0, 2, 3]]], axis=1).reshape(-1, 3)
    return TriangleMesh(c["v"], tris, np.repeat(eids, 2), vids)


def extract_backward(grid, params, mesh, d_vertices):
    """Reverse-mode gradients of extracted vertex positions.

    Returns the :class:`ParamGradients` of ``sum(d_vertices * mesh.vertices)``
    with respect to ``s``, ``delta``, ``alpha`` and ``beta``.
    """
    params.check(grid)
    vids = mesh.vertex_provenance
    if vids is None:
        raise ContractError("mesh carries no vertex provenance")
    d_vertices = np.asarray(d_vertices, dtype=np.float64)
    if d_vertices.shape != mesh.vertices.shape:
        raise ContractError("d_vertices must match mesh.vertices in shape")
    grads = ParamGradients.zeros_like(params)
    if len(vids) == 0:
        return grads
    if vids.min() < 0 or vids.max() >= grid.n_voxels:
        raise ContractError("vertex provenance refers to voxels outside the grid")
    nneg = (params.s[grid.voxel_corners[vids]] < 0).sum(axis=1)
    if np.any((nneg == 0) | (nneg == 8)):
        raise ContractError("vertex provenance refers to voxels without a sign change")
    c = _crossings(grid, params, vids)
    if not np.allclose(c["v"], mesh.vertices, rtol=0.0, atol=1e-12):
        raise ContractError("mesh does not match the extraction of these parameters")

    g = d_vertices
    inv_w = 1.0 / c["wsum"]
    # v = sum_e w_e x_e / sum_e w_e
    diff = c["x"] - c["v"][:, None, :]
    d_beta_local = np.where(c["cross"], np.einsum("mei,mi->me", diff, g) * inv_w[:, None], 0.0)
    ge = (c["w"] * inv_w[:, None])[..., None] * g[:, None, :]
    # x = pa + t (pb - pa)
    t = c["t"][..., None]
    d_pa = ge * (1.0 - t)
    d_pb = ge * t
    gt = np.einsum("mei,mei->me", ge, c["pb"] - c["pa"])
    # t = A / (A - B)
    den2 = c["denom"] ** 2
    dA = np.where(c["cross"], gt * (-c["B"]) / den2, 0.0)
    dB = np.where(c["cross"], gt * c["A"] / den2, 0.0)

    vc = c["vc"]
    ia, ib = EDGE_CORNERS[:, 0], EDGE_CORNERS[:, 1]
    ca, cb = vc[:, ia].ravel(), vc[:, ib].ravel()
    nc = grid.n_corners
    grads.d_s = (np.bincount(ca, (dA * c["aa"]).ravel(), nc)
                 + np.bincount(cb, (dB * c["ab"]).ravel(), nc))
    for k in range(3):
        grads.d_delta[:, k] = (np.bincount(ca, d_pa[..., k].ravel(), nc)
                               + np.bincount(cb, d_pb[..., k].ravel(), nc))
    d_alpha_local = np.zeros((len(vids), 8))
    for e in range(12):
        d_alpha_local[:, ia[e]] += dA[:, e] * c["sa"][:, e]
        d_alpha_local[:, ib[e]] += dB[:, e] * c["sb"][:, e]
    grads.d_alpha[vids] = d_alpha_local
    grads.d_beta[vids] = d_beta_local
    return grads


def clamp_params(grid, params, max_shift=0.5, min_weight=1e-3):
    """In-place projection onto the feasible set: ``|delta| <= max_shift * cell`` per axis, weights >= ``min_weight``."""
    lim = max_shift * grid.cell_size
    np.clip(params.delta, -lim, lim, out=params.delta)
    np.maximum(params.alpha, min_weight, out=params.alpha)
    np.maximum(params.beta, min_weight, out=params.beta)
    return params


def save_params(params, path):
    """Store parameters as an uncompressed ``.npz`` with arrays ``s, delta, alpha, beta``."""
    with open(path, "wb") as fh:
        np.savez(fh, s=params.s, delta=params.delta, alpha=params.alpha, beta=params.beta)


def load_params(path, grid=None):
    with np.load(path) as z:
        missing = {"s", "delta", "alpha", "beta"} - set(z.files)
        if missing:
            raise ValueError(f"{path}: missing arrays {sorted(missing)}")
        params = FlexParams(z["s"].astype(np.float64), z["delta"].astype(np.float64),
                            z["alpha"].astype(np.float64), z["beta"].astype(np.float64))
    if grid is not None:
        params.check(grid)
    return params
