import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sparseflex.estimators import PointCloudVoxelizer, SparseFlexReconstructor
from sparseflex.frustum import Camera
from sparseflex.grid import voxelize_points
from sparseflex.meshio import sample_surface
from sparseflex.shapes import icosphere


def test_voxelizer(rng):
    pts = sample_surface(icosphere(0.6, 3), 5000, 0).points
    v = PointCloudVoxelizer(resolution=16).fit(pts)
    ref = voxelize_points(pts, 16)
    np.testing.assert_array_equal(v.grid_.voxels, ref.voxels)
    ids = v.transform(pts)
    assert np.all(ids >= 0)
    assert np.all(v.transform(np.zeros((1, 3))) == -1)
    assert v.fit_transform(pts).shape == (5000,)
    assert clone(v).get_params() == {"resolution": 16, "margin": 0.0, "domain": None}


def test_voxelizer_not_fitted():
    with pytest.raises(NotFittedError):
        PointCloudVoxelizer().transform(np.zeros((1, 3)))


def test_reconstructor():
    target = icosphere(0.6, 3)
    est = SparseFlexReconstructor(resolution=16, iterations=3, views=2, image_size=32)
    with pytest.raises(NotFittedError):
        est.predict()
    with pytest.raises(TypeError):
        est.fit(np.zeros((3, 3)))
    est.fit(target)
    assert est.loss_curve().shape == (3,)
    mesh = est.predict()
    assert mesh.n_faces > 0
    cam = Camera.look_at((0, 0, 3), (0, 0, 0), (0, 1, 0), np.pi / 3, 1.0, 1.0, 6.0)
    part = est.predict(camera=cam)
    assert 0 < part.n_faces < mesh.n_faces
    s = est.score(target)
    assert 0 <= s <= 100
    assert clone(est).get_params()["resolution"] == 16
