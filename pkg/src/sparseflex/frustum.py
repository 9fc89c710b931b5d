"""Perspective cameras, voxel-centre frustum tests and adaptive near/far control.

Clip space follows the OpenGL convention: the camera looks down ``-z`` in
camera space and the NDC cube is ``[-1, 1]^3`` with the near plane at
``z_ndc = -1``. For ``g = 1 / tan(fov / 2)`` the projection matrix is::

    [ g/aspect  0   0              0            ]
    [ 0         g   0              0            ]
    [ 0         0   (f+n)/(n-f)    2fn/(n-f)    ]
    [ 0         0   -1             0            ]

and ``mvp = projection @ world_to_camera``.

Camera files are JSON objects. A pose is given either as ``position``,
``look_at`` and ``up`` or as a 4x4 ``world_to_camera`` matrix; ``fov_deg``,
``aspect``, ``near`` and ``far`` complete the description.
"""

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = ["Camera", "FrustumResult", "mvp", "active_voxels", "adapt_frustum", "load_camera", "save_camera"]

_CAMERA_KEYS = {"position", "look_at", "up", "world_to_camera", "fov_deg", "aspect", "near", "far"}


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera with a rigid world-to-camera transform."""

    world_to_camera: np.ndarray
    fov: float
    aspect: float = 1.0
    near: float = 0.1
    far: float = 10.0

    def __post_init__(self):
        m = np.asarray(self.world_to_camera, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("world_to_camera must be 4x4")
        rot = m[:3, :3]
        if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-12):
            raise ValueError("world_to_camera must have bottom row (0, 0, 0, 1)")
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-9 or np.linalg.det(rot) <= 0:
            raise ValueError("world_to_camera rotation must be orthonormal with det +1")
        if not 0 < self.fov < np.pi:
            raise ValueError("fov must lie in (0, pi)")
        if not self.aspect > 0:
            raise ValueError("aspect must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        m.setflags(write=False)
        object.__setattr__(self, "world_to_camera", m)

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0), fov=np.pi / 3, aspect=1.0, near=0.1, far=10.0):
        eye = np.asarray(position, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        if np.linalg.norm(fwd) == 0:
            raise ValueError("camera position and target coincide")
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            # up parallel to the view direction; pick any orthogonal axis
            right = np.cross(fwd, np.eye(3)[np.argmin(np.abs(fwd))])
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        m = np.eye(4)
        m[0, :3], m[1, :3], m[2, :3] = right, true_up, -fwd
        m[:3, 3] = -m[:3, :3] @ eye
        return cls(m, fov, aspect, near, far)

    @property
    def position(self):
        r = self.world_to_camera[:3, :3]
        return -r.T @ self.world_to_camera[:3, 3]

    def with_planes(self, near, far):
        return replace(self, near=float(near), far=float(far))

    def projection(self):
        g = 1.0 / np.tan(self.fov / 2.0)
        n, f = self.near, self.far
        return np.array(
            [
                [g / self.aspect, 0.0, 0.0, 0.0],
                [0.0, g, 0.0, 0.0],
                [0.0, 0.0, (f + n) / (n - f), 2.0 * f * n / (n - f)],
                [0.0, 0.0, -1.0, 0.0],
            ]
        )

    def to_camera(self, points):
        m = self.world_to_camera
        return np.asarray(points) @ m[:3, :3].T + m[:3, 3]


@dataclass
class FrustumResult:
    active: np.ndarray
    achieved_ratio: float
    near: float
    far: float
    iterations: int
    reached: bool
    camera: Camera


def mvp(cam):
    """Model-view-projection matrix of ``cam`` (model transform is the identity)."""
    return cam.projection() @ cam.world_to_camera


def _contained(points, m):
    clip = points @ m[:3, :3].T + m[:3, 3]
    w = points @ m[3, :3] + m[3, 3]
    return (w > 0) & np.all((clip >= -w[:, None]) & (clip <= w[:, None]), axis=1)


def active_voxels(grid, m, conservative=False):
    """Ids of voxels whose centre lies in the clip volume of ``m`` (inclusive bounds).

    With ``conservative=True`` a voxel is also active when any of its corners
    is inside, which makes sectional extractions over a partition of space
    stitch back into the full mesh.
    """
    m = np.asarray(m, dtype=np.float64)
    inside = _contained(grid.voxel_centers(), m)
    if conservative:
        corner_in = _contained(grid.corner_positions(), m)
        inside |= np.any(corner_in[grid.voxel_corners], axis=1)
    return np.flatnonzero(inside)


def _far_limit(grid, cam):
    lo, hi = grid.domain
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    return float(np.max(np.linalg.norm(corners - cam.position, axis=1)))


def adapt_frustum(grid, cam, ratio, tol=0.02, max_iter=32, eps=1e-4):
    """Adjust the clipping planes until about ``ratio * N_v`` voxels are active.

    The near plane is held while the far plane is bisected on
    ``[near + eps, f_max]`` where ``f_max`` is the distance to the farthest
    domain corner. If even ``f_max`` activates too few voxels the near plane
    is bisected down towards ``eps``. Unreachable targets return the closest
    iterate with ``reached=False``.
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"visibility ratio must lie in (0, 1], got {ratio}")
    nv = grid.n_voxels
    f_max = max(_far_limit(grid, cam), cam.near + 2 * eps)
    lo_target, hi_target = (ratio - tol) * nv, (ratio + tol) * nv
    goal = ratio * nv
    best = None
    it = 0

    def evaluate(n, f):
        nonlocal best, it
        it += 1
        c = cam.with_planes(n, f)
        ids = active_voxels(grid, mvp(c))
        if best is None or abs(len(ids) - goal) < abs(len(best[0]) - goal):
            best = (ids, c)
        return len(ids)

    near = cam.near
    count = evaluate(near, f_max)
    if nv == 0 or lo_target <= count <= hi_target:
        pass
    elif count > hi_target:
        a, b = near + eps, f_max
        while it < max_iter:
            mid = 0.5 * (a + b)
            count = evaluate(near, mid)
            if lo_target <= count <= hi_target:
                break
            if count < lo_target:
                a = mid
            else:
                b = mid
    else:
        a, b = eps, near
        while it < max_iter:
            mid = 0.5 * (a + b)
            count = evaluate(mid, f_max)
            if lo_target <= count <= hi_target:
                break
            if count < lo_target:
                b = mid
            else:
                a = mid

    ids, c = best
    reached = nv == 0 or lo_target <= len(ids) <= hi_target
    achieved = len(ids) / nv if nv else 1.0
    return FrustumResult(ids, achieved, c.near, c.far, it, reached, c)


def camera_from_dict(d):
    unknown = set(d) - _CAMERA_KEYS
    if unknown:
        raise ValueError(f"unknown camera keys: {sorted(unknown)}")
    fov = np.deg2rad(float(d.get("fov_deg", 60.0)))
    aspect = float(d.get("aspect", 1.0))
    near, far = float(d.get("near", 0.1)), float(d.get("far", 10.0))
    if "world_to_camera" in d:
        return Camera(np.array(d["world_to_camera"], dtype=np.float64), fov, aspect, near, far)
    for key in ("position", "look_at"):
        if key not in d:
            raise ValueError(f"camera needs either world_to_camera or {key}")
    return Camera.look_at(d["position"], d["look_at"], d.get("up", (0.0, 0.0, 1.0)), fov, aspect, near, far)


def load_camera(path):
    return camera_from_dict(json.loads(Path(path).read_text()))


def save_camera(cam, path):
    d = {
        "world_to_camera": cam.world_to_camera.tolist(),
        "fov_deg": float(np.rad2deg(cam.fov)),
        "aspect": cam.aspect,
        "near": cam.near,
        "far": cam.far,
    }
    Path(path).write_text(json.dumps(d, indent=2))
