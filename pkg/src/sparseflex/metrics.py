"""Chamfer distance, F-score and boundary / topology statistics."""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ._validation import check_points
from .grid import PointCloud

__all__ = [
    "MetricReport",
    "BoundaryStats",
    "nearest_distances",
    "chamfer",
    "fscore",
    "evaluate_meshes",
    "boundary_stats",
    "CD_SCALE",
    "F_SCALE",
]

CD_SCALE = 1e4
F_SCALE = 1e2
FSCORE_THRESHOLDS = (0.001, 0.01)


def _as_points(x, name):
    pts = x.points if isinstance(x, PointCloud) else x
    pts = check_points(pts, name)
    if len(pts) == 0:
        raise ValueError(f"{name} must not be empty")
    return pts


def nearest_distances(a, b):
    """Euclidean distance from every point of ``a`` to its nearest neighbour in ``b``."""
    d, _ = cKDTree(b).query(a, k=1)
    return d


def chamfer(a, b, squared=True):
    """Symmetric Chamfer distance ``(mean_a min_b d + mean_b min_a d) / 2``.

    With ``squared=True`` (the default used in every report) ``d`` is the
    squared Euclidean distance; otherwise plain Euclidean.
    """
    a, b = _as_points(a, "a"), _as_points(b, "b")
    dab, dba = nearest_distances(a, b), nearest_distances(b, a)
    if squared:
        dab, dba = dab**2, dba**2
    return 0.5 * (float(dab.mean()) + float(dba.mean()))


def fscore(a, b, threshold):
    """F-score in ``[0, 100]``: precision of ``a`` against ``b`` and recall of ``b`` against ``a``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    a, b = _as_points(a, "a"), _as_points(b, "b")
    precision = float(np.mean(nearest_distances(a, b) <= threshold))
    recall = float(np.mean(nearest_distances(b, a) <= threshold))
    if precision + recall == 0:
        return 0.0
    return F_SCALE * 2 * precision * recall / (precision + recall)


@dataclass
class MetricReport:
    """Chamfer distance x 1e4 and F-scores x 1e2 at thresholds 0.001 and 0.01."""

    cd_e4: float
    f1_001: float
    f1_01: float
    n_samples_a: int
    n_samples_b: int
    seed: int

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def summary(self):
        return f"CD(x1e4)={self.cd_e4:.4f}  F1@0.001(x1e2)={self.f1_001:.2f}  F1@0.01(x1e2)={self.f1_01:.2f}"


def evaluate_points(a, b, seed=0):
    a, b = _as_points(a, "a"), _as_points(b, "b")
    dab, dba = nearest_distances(a, b), nearest_distances(b, a)
    cd = 0.5 * (float(np.mean(dab**2)) + float(np.mean(dba**2)))

    def f(tau):
        p, r = float(np.mean(dab <= tau)), float(np.mean(dba <= tau))
        return 0.0 if p + r == 0 else F_SCALE * 2 * p * r / (p + r)

    return MetricReport(cd * CD_SCALE, f(FSCORE_THRESHOLDS[0]), f(FSCORE_THRESHOLDS[1]), len(a), len(b), seed)


def evaluate_meshes(pred, target, n_samples=100_000, seed=0):
    """Sample both meshes with the same seed and score them. Empty predictions score CD = inf, F = 0."""
    from .meshio import sample_surface

    b = sample_surface(target, n_samples, seed + 1).points
    if pred.n_faces == 0 or not pred.face_areas().sum() > 0:
        return MetricReport(float("inf"), 0.0, 0.0, 0, len(b), seed)
    a = sample_surface(pred, n_samples, seed).points
    return evaluate_points(a, b, seed)


@dataclass
class BoundaryStats:
    boundary_edges: int
    boundary_loops: int
    euler_characteristic: int
    components: int
    nonmanifold_edges: int
    vertices: int
    edges: int
    faces: int


def boundary_stats(mesh):
    """Edge-incidence census of a triangle mesh.

    Only vertices referenced by a face are counted, so dual vertices that
    ended up without faces do not distort the Euler characteristic.
    """
    t = mesh.triangles
    if len(t) == 0:
        return BoundaryStats(0, 0, 0, 0, 0, 0, 0, 0)
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    used = np.unique(t)
    n = mesh.n_vertices

    bnd = edges[counts == 1]
    loops = 0
    if len(bnd):
        g = coo_matrix((np.ones(len(bnd)), (bnd[:, 0], bnd[:, 1])), shape=(n, n))
        _, labels = connected_components(g, directed=False)
        loops = len(np.unique(labels[np.unique(bnd)]))

    g = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    comps = len(np.unique(labels[used]))
    chi = len(used) - len(edges) + len(t)
    return BoundaryStats(int(len(bnd)), int(loops), int(chi), int(comps),
                         int(np.sum(counts > 2)), int(len(used)), int(len(edges)), int(len(t)))
