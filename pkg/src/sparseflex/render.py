"""Deterministic software rasterizer for depth / normal / mask / face-id buffers.

Pixels are sampled at their centres. A pixel ray ``r = (x_ndc * tan(fov/2) * aspect,
y_ndc * tan(fov/2), -1)`` in camera space hits a triangle's plane at depth
``d = (N . v0) / (N . r)``, which is the exact perspective-correct depth. Depth
is the positive camera-space ``-z`` distance; only hits with
``near <= d <= far`` are kept. Ties in depth keep the lower face id.

The backward pass holds pixel-to-face coverage fixed. Depth gradients reach
the vertices through ``dd/dv_k = b_k N / (N . r)`` with ``b`` the barycentric
coordinates of the hit point; normal gradients go through the normalised face
normal.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from ._validation import ContractError

__all__ = ["RenderBuffers", "rasterize", "rasterize_backward", "pixel_rays", "save_pfm", "load_pfm", "save_png"]


@dataclass
class RenderBuffers:
    """Rendered images; background has ``depth = inf``, ``normal = 0``, ``mask = 0``, ``face_id = -1``."""

    depth: np.ndarray
    normal: np.ndarray
    mask: np.ndarray
    face_id: np.ndarray

    @property
    def shape(self):
        return self.depth.shape


def pixel_rays(cam, height, width):
    """Camera-space ray directions through the pixel centres, shape ``(H, W, 3)``."""
    t = np.tan(cam.fov / 2.0)
    x = (2.0 * (np.arange(width) + 0.5) / width - 1.0) * t * cam.aspect
    y = (1.0 - 2.0 * (np.arange(height) + 0.5) / height) * t
    rays = np.empty((height, width, 3))
    rays[..., 0] = x[None, :]
    rays[..., 1] = y[:, None]
    rays[..., 2] = -1.0
    return rays


@njit(cache=True)
def _cross(a0, a1, a2, b0, b1, b2):
    return a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0


@njit(cache=True)
def _raster_kernel(vc, tris, height, width, tx, ty, near, far, depth, fid):
    nf = tris.shape[0]
    px = np.empty(4)
    py = np.empty(4)
    for f in range(nf):
        i0, i1, i2 = tris[f, 0], tris[f, 1], tris[f, 2]
        # near-plane clip of the triangle, only to bound its screen footprint
        cnt = 0
        for k in range(3):
            a = tris[f, k]
            b = tris[f, (k + 1) % 3]
            za, zb = vc[a, 2], vc[b, 2]
            ina = za <= -near
            inb = zb <= -near
            if ina:
                if cnt < 4:
                    px[cnt] = vc[a, 0] / -za
                    py[cnt] = vc[a, 1] / -za
                cnt += 1
            if ina != inb:
                s = (-near - za) / (zb - za)
                x = vc[a, 0] + s * (vc[b, 0] - vc[a, 0])
                y = vc[a, 1] + s * (vc[b, 1] - vc[a, 1])
                if cnt < 4:
                    px[cnt] = x / near
                    py[cnt] = y / near
                cnt += 1
        if cnt == 0:
            continue
        xmin, xmax, ymin, ymax = 1e300, -1e300, 1e300, -1e300
        for k in range(cnt):
            # continuous pixel coordinates
            u = (px[k] / tx + 1.0) * 0.5 * width - 0.5
            v = (1.0 - py[k] / ty) * 0.5 * height - 0.5
            xmin = min(xmin, u)
            xmax = max(xmax, u)
            ymin = min(ymin, v)
            ymax = max(ymax, v)
        c0 = int(max(0.0, min(width - 1.0, np.floor(xmin))))
        c1 = int(max(0.0, min(width - 1.0, np.ceil(xmax))))
        r0 = int(max(0.0, min(height - 1.0, np.floor(ymin))))
        r1 = int(max(0.0, min(height - 1.0, np.ceil(ymax))))
        if xmax < -0.5 or xmin > width - 0.5 or ymax < -0.5 or ymin > height - 0.5:
            continue

        ax, ay, az = vc[i0, 0], vc[i0, 1], vc[i0, 2]
        bx, by, bz = vc[i1, 0], vc[i1, 1], vc[i1, 2]
        cx, cy, cz = vc[i2, 0], vc[i2, 1], vc[i2, 2]
        nx, ny, nz = _cross(bx - ax, by - ay, bz - az, cx - ax, cy - ay, cz - az)
        # edge planes through the eye
        e0x, e0y, e0z = _cross(bx, by, bz, cx, cy, cz)
        e1x, e1y, e1z = _cross(cx, cy, cz, ax, ay, az)
        e2x, e2y, e2z = _cross(ax, ay, az, bx, by, bz)
        nd = nx * ax + ny * ay + nz * az
        for r in range(r0, r1 + 1):
            ry = (1.0 - 2.0 * (r + 0.5) / height) * ty
            for c in range(c0, c1 + 1):
                rx = (2.0 * (c + 0.5) / width - 1.0) * tx
                w0 = rx * e0x + ry * e0y - e0z
                w1 = rx * e1x + ry * e1y - e1z
                w2 = rx * e2x + ry * e2y - e2z
                if not ((w0 >= 0 and w1 >= 0 and w2 >= 0) or (w0 <= 0 and w1 <= 0 and w2 <= 0)):
                    continue
                nr = nx * rx + ny * ry - nz
                if nr == 0.0 or w0 + w1 + w2 == 0.0:
                    continue
                d = nd / nr
                if d < near or d > far:
                    continue
                if d < depth[r, c]:
                    depth[r, c] = d
                    fid[r, c] = f


def rasterize(mesh, cam, height, width):
    """Render ``mesh`` seen from ``cam`` into :class:`RenderBuffers`."""
    if height < 1 or width < 1:
        raise ValueError("image size must be positive")
    depth = np.full((height, width), np.inf)
    fid = np.full((height, width), -1, dtype=np.int64)
    if mesh.n_faces:
        vc = np.ascontiguousarray(cam.to_camera(mesh.vertices))
        t = np.tan(cam.fov / 2.0)
        _raster_kernel(vc, np.ascontiguousarray(mesh.triangles), height, width,
                       t * cam.aspect, t, cam.near, cam.far, depth, fid)
    mask = fid >= 0
    normal = np.zeros((height, width, 3))
    if mask.any():
        vc = cam.to_camera(mesh.vertices)
        n, _ = _face_normals_facing(vc, mesh.triangles)
        normal[mask] = n[fid[mask]]
    return RenderBuffers(depth, normal, mask.astype(np.uint8), fid)


def _face_normals_facing(vc, tris):
    """Unit face normals flipped towards the eye, with the raw normals' sign and length."""
    v0, v1, v2 = vc[tris[:, 0]], vc[tris[:, 1]], vc[tris[:, 2]]
    raw = np.cross(v1 - v0, v2 - v0)
    length = np.linalg.norm(raw, axis=1)
    sign = np.where(np.einsum("fi,fi->f", raw, v0) < 0, 1.0, -1.0)
    safe = np.where(length > 0, length, 1.0)
    return raw * (sign / safe)[:, None], (sign, safe, raw)


def rasterize_backward(mesh, cam, buffers, d_depth, d_normal):
    """World-space vertex gradients of ``sum(d_depth * depth) + sum(d_normal * normal)``.

    Coverage is frozen: the mask and face ids of ``buffers`` are treated as
    constants and background pixels contribute nothing.
    """
    h, w = buffers.depth.shape
    d_depth = np.asarray(d_depth, dtype=np.float64)
    d_normal = np.asarray(d_normal, dtype=np.float64)
    if d_depth.shape != (h, w) or d_normal.shape != (h, w, 3):
        raise ContractError("gradient images must match the buffers")
    fid = buffers.face_id
    grad = np.zeros((mesh.n_vertices, 3))
    pix = fid >= 0
    if not pix.any():
        return grad
    if fid.max() >= mesh.n_faces:
        raise ContractError("buffers reference faces the mesh does not have")

    vc = cam.to_camera(mesh.vertices)
    tris = mesh.triangles
    f = fid[pix]
    rays = pixel_rays(cam, h, w)[pix]
    v0, v1, v2 = vc[tris[f, 0]], vc[tris[f, 1]], vc[tris[f, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    nr = np.einsum("pi,pi->p", n, rays)
    b0 = np.einsum("pi,pi->p", rays, np.cross(v1, v2))
    b1 = np.einsum("pi,pi->p", rays, np.cross(v2, v0))
    b2 = np.einsum("pi,pi->p", rays, np.cross(v0, v1))
    bsum = b0 + b1 + b2
    g_plane = (d_depth[pix] / nr)[:, None] * n
    gc = np.zeros((mesh.n_vertices, 3))
    for idx, b in ((tris[f, 0], b0), (tris[f, 1], b1), (tris[f, 2], b2)):
        contrib = g_plane * (b / bsum)[:, None]
        for k in range(3):
            gc[:, k] += np.bincount(idx, contrib[:, k], mesh.n_vertices)

    # normals: sum pixel gradients per face, then differentiate N / |N|
    nf = mesh.n_faces
    g_face = np.zeros((nf, 3))
    for k in range(3):
        g_face[:, k] = np.bincount(f, d_normal[pix][:, k], nf)
    unit, (sign, length, raw) = _face_normals_facing(vc, tris)
    proj = g_face - unit * np.einsum("fi,fi->f", unit, g_face)[:, None]
    g_raw = proj * (sign / length)[:, None]
    a = vc[tris[:, 1]] - vc[tris[:, 0]]
    b = vc[tris[:, 2]] - vc[tris[:, 0]]
    ga = np.cross(b, g_raw)
    gb = np.cross(g_raw, a)
    for k in range(3):
        gc[:, k] += np.bincount(tris[:, 1], ga[:, k], mesh.n_vertices)
        gc[:, k] += np.bincount(tris[:, 2], gb[:, k], mesh.n_vertices)
        gc[:, k] -= np.bincount(tris[:, 0], ga[:, k] + gb[:, k], mesh.n_vertices)
    # camera = R world + t  =>  dL/dworld = R^T dL/dcamera
    return gc @ cam.world_to_camera[:3, :3]


def save_pfm(path, image):
    """Write a single-channel float image as little-endian PFM (bottom row first)."""
    image = np.asarray(image, dtype="<f4")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image[::-1]).tobytes())


def load_pfm(path):
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"Pf":
        raise ValueError(f"{path}: only single-channel PFM is supported")
    w, h = map(int, parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    return np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w)[::-1].astype(np.float64)


def save_png(path, image):
    """Save a mask (``H x W``) or a normal map (``H x W x 3`` in ``[-1, 1]``) as 8-bit PNG."""
    from PIL import Image

    image = np.asarray(image)
    if image.ndim == 3:
        data = np.clip(np.round((image + 1.0) * 127.5), 0, 255).astype(np.uint8)
    else:
        data = (np.asarray(image) > 0).astype(np.uint8) * 255
    Image.fromarray(data).save(path)
