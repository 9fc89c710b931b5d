"""Input validation helpers shared by the library and the estimator wrappers."""

import numpy as np
from sklearn.utils import check_array


class ContractError(ValueError):
    """Raised when inputs violate an operation's precondition (e.g. stale provenance)."""


def check_points(points, name="points", allow_empty=True):
    """Return ``points`` as a float64 ``(n, 3)`` array."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        if not allow_empty:
            raise ValueError(f"{name} must not be empty")
        return np.zeros((0, 3))
    points = check_array(points, dtype=np.float64, ensure_2d=True)
    if points.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {points.shape}")
    return points


def check_faces(faces, n_vertices, name="faces"):
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise ValueError(f"{name} must have shape (m, 3), got {faces.shape}")
    if faces.min() < 0 or faces.max() >= n_vertices:
        raise ValueError(f"{name} index out of range [0, {n_vertices})")
    return faces


def check_domain(domain):
    """Return the domain box as a ``(2, 3)`` array ``[lo, hi]``."""
    if domain is None:
        domain = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    box = np.asarray(domain, dtype=np.float64)
    if box.shape == (2,):
        box = np.array([[box[0]] * 3, [box[1]] * 3])
    if box.shape != (2, 3):
        raise ValueError(f"domain must be [lo, hi] with 3-vectors, got shape {box.shape}")
    if not np.all(box[1] > box[0]):
        raise ValueError("domain must have positive extent on every axis")
    return box


def check_resolution(n):
    if isinstance(n, (bool, np.bool_)) or int(n) != n:
        raise ValueError(f"resolution must be an integer, got {n!r}")
    n = int(n)
    if n < 1:
        raise ValueError(f"resolution must be >= 1, got {n}")
    if n >= 2**21:
        raise OverflowError(f"resolution {n} exceeds the 21-bit lattice limit")
    return n


def check_finite(x, name):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x
