"""scikit-learn style wrappers around voxelisation and fitting."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points
from .flexicubes import TriangleMesh, extract
from .frustum import adapt_frustum
from .grid import PointCloud, point_cells, voxelize_points
from .losses import LossWeights
from .metrics import evaluate_meshes
from .optimize import FitConfig, fit

__all__ = ["PointCloudVoxelizer", "SparseFlexReconstructor"]


class PointCloudVoxelizer(BaseEstimator, TransformerMixin):
    """Sparse voxelisation of an (n, 3) point array.

    ``fit`` builds ``grid_``; ``transform`` maps points to voxel ids of that
    grid (-1 for points whose cell is absent).
    """

    def __init__(self, resolution=64, margin=0.0, domain=None):
        self.resolution = resolution
        self.margin = margin
        self.domain = domain

    def fit(self, X, y=None):
        pts = X.points if isinstance(X, PointCloud) else check_points(X, "X")
        self.grid_ = voxelize_points(pts, self.resolution, self.domain, self.margin)
        self.n_voxels_ = self.grid_.n_voxels
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        pts = X.points if isinstance(X, PointCloud) else check_points(X, "X")
        g = self.grid_
        return g.find_voxels(point_cells(pts, g.resolution, g.domain))


class SparseFlexReconstructor(BaseEstimator):
    """Fit sparse Flexicubes parameters to a target mesh.

    Parameters mirror :class:`~sparseflex.optimize.FitConfig`. ``fit`` takes a
    :class:`TriangleMesh`; ``predict`` returns the extracted mesh, optionally
    restricted to the adaptive frustum of ``camera``; ``score`` is the
    F-score at 0.01 (x100) against a reference mesh.
    """

    def __init__(self, resolution=64, iterations=400, lr=1e-2, views=4, image_size=128, visibility=0.3,
                 objective="render", hollow=False, init_source="analytic", init_shape="sphere",
                 init_noise=0.05, flex_weight=1.0, seed=0):
        self.resolution = resolution
        self.iterations = iterations
        self.lr = lr
        self.views = views
        self.image_size = image_size
        self.visibility = visibility
        self.objective = objective
        self.hollow = hollow
        self.init_source = init_source
        self.init_shape = init_shape
        self.init_noise = init_noise
        self.flex_weight = flex_weight
        self.seed = seed

    def _config(self):
        return FitConfig(resolution=self.resolution, iterations=self.iterations, lr=self.lr, views=self.views,
                         image_size=self.image_size, visibility=self.visibility, objective=self.objective,
                         hollow=self.hollow, init_source=self.init_source, init_shape=self.init_shape,
                         init_noise=self.init_noise, weights=LossWeights(flex=self.flex_weight), seed=self.seed)

    def fit(self, X, y=None):
        if not isinstance(X, TriangleMesh):
            raise TypeError("X must be a TriangleMesh")
        self.params_, self.grid_, self.report_ = fit(X, self._config())
        return self

    def predict(self, X=None, camera=None):
        check_is_fitted(self, "params_")
        active = None
        if camera is not None:
            active = adapt_frustum(self.grid_, camera, self.visibility).active
        return extract(self.grid_, self.params_, active)

    def score(self, X, y=None, n_samples=100_000):
        pred = self.predict()
        return float(evaluate_meshes(pred, X, n_samples, self.seed).f1_01)

    def loss_curve(self):
        check_is_fitted(self, "report_")
        return np.asarray(self.report_.loss_trace)
