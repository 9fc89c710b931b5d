"""Analytic signed distance functions and matching reference meshes."""

import numpy as np

from ._validation import check_domain
from .flexicubes import TriangleMesh
from .grid import CORNER_OFFSETS, build_grid

__all__ = [
    "SHAPES",
    "sphere_sdf",
    "plane_sdf",
    "hollow_sphere_sdf",
    "icosphere",
    "uv_hemisphere",
    "hollow_sphere_mesh",
    "target_mesh",
    "sign_change_grid",
    "sample_sdf",
]


def sphere_sdf(radius=0.6, center=(0.0, 0.0, 0.0)):
    center = np.asarray(center, dtype=np.float64)

    def sdf(p):
        return np.linalg.norm(np.asarray(p) - center, axis=-1) - radius

    return sdf


def plane_sdf(height=0.25):
    def sdf(p):
        return np.asarray(p)[..., 2] - height

    return sdf


def hollow_sphere_sdf(outer=0.6, inner=0.3):
    """Solid shell between two concentric spheres; the cavity is outside."""

    def sdf(p):
        r = np.linalg.norm(np.asarray(p), axis=-1)
        return np.maximum(r - outer, inner - r)

    return sdf


def icosphere(radius=0.6, subdivisions=4):
    t = (1.0 + 5**0.5) / 2.0
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=np.float64,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        mid = v[uniq].mean(axis=1)
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = inv.ravel().reshape(3, -1).T + len(v)
        v = np.vstack([v, mid])
        a, b, c = f.T
        ab, bc, ca = m.T
        f = np.concatenate([np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
                            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1)])
    return TriangleMesh(v * radius, f)


def uv_hemisphere(radius=0.6, rings=48, segments=192):
    """Upper (z >= 0) half of a sphere as an open mesh with one boundary loop."""
    theta = np.linspace(0.0, np.pi / 2, rings + 1)[1:]
    phi = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    ring_pts = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], -1).reshape(-1, 3)
    verts = np.vstack([[0.0, 0.0, 1.0], ring_pts]) * radius
    idx = np.arange(rings * segments).reshape(rings, segments) + 1
    nxt = np.roll(idx, -1, axis=1)
    cap = np.stack([np.zeros(segments, dtype=np.int64), idx[0], nxt[0]], 1)
    a, b, c, d = idx[:-1], idx[1:], nxt[1:], nxt[:-1]
    quads = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    return TriangleMesh(verts, np.vstack([cap, quads]))


def hollow_sphere_mesh(outer=0.6, inner=0.3, subdivisions=4):
    """Two concentric spheres; the inner one is wound inward so normals leave the solid."""
    a = icosphere(outer, subdivisions)
    b = icosphere(inner, subdivisions)
    faces = np.vstack([a.triangles, b.triangles[:, ::-1] + a.n_vertices])
    return TriangleMesh(np.vstack([a.vertices, b.vertices]), faces)


SHAPES = {
    "sphere": (lambda: sphere_sdf(0.6), lambda: icosphere(0.6, 5)),
    "plane": (lambda: plane_sdf(0.25), None),
    "hemisphere": (lambda: sphere_sdf(0.6), lambda: uv_hemisphere(0.6)),
    "hollow": (lambda: hollow_sphere_sdf(0.6, 0.3), lambda: hollow_sphere_mesh(0.6, 0.3, 5)),
}


def target_mesh(name):
    try:
        build = SHAPES[name][1]
    except KeyError:
        raise ValueError(f"unknown shape {name!r}; choose from {sorted(SHAPES)}") from None
    if build is None:
        raise ValueError(f"shape {name!r} has no reference mesh")
    return build()


def sample_sdf(grid, sdf):
    """Evaluate ``sdf`` at the grid's corner positions."""
    return np.asarray(sdf(grid.corner_positions()), dtype=np.float64)


def sign_change_grid(sdf, resolution, domain=None):
    """Grid of every cell whose corner SDF values have mixed signs (dense scan)."""
    box = check_domain(domain)
    n = resolution
    cell = (box[1] - box[0]) / n
    axes = [box[0, a] + np.arange(n + 1) * cell[a] for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    neg = sdf(pts) < 0
    count = np.zeros((n, n, n), dtype=np.int64)
    for dx, dy, dz in CORNER_OFFSETS:
        count += neg[dx:dx + n, dy:dy + n, dz:dz + n]
    coords = np.argwhere((count > 0) & (count < 8))
    return build_grid(coords, n, box)
