import itertools

import numpy as np
import pytest

from sparseflex.flexicubes import FlexParams, extract
from sparseflex.grid import build_grid, morton_encode, voxelize_points
from sparseflex.meshio import sample_surface
from sparseflex.metrics import boundary_stats
from sparseflex.shapes import icosphere, sample_sdf, sign_change_grid, sphere_sdf
from sparseflex.upsample import gt_occupancy, self_prune, subdivide


def voxel_set(g):
    return set(map(tuple, g.voxels.tolist()))


@pytest.mark.parametrize("k", [2, 4])
def test_single_voxel(k):
    g = build_grid([(1, 2, 3)], 4)
    ch, smap = subdivide(g, k)
    assert ch.n_voxels == k**3 and ch.resolution == 4 * k
    assert np.all(ch.voxels // k == [1, 2, 3])
    assert smap.factor == k
    np.testing.assert_array_equal(np.sort(smap.children_of(0)), np.arange(k**3))


def test_shell_children(rng):
    g = sign_change_grid(sphere_sdf(0.6), 16)
    ch, smap = subdivide(g, 2)
    assert ch.n_voxels == 8 * g.n_voxels
    ref = {(2 * x + a, 2 * y + b, 2 * z + c) for x, y, z in g.voxels.tolist()
           for a, b, c in itertools.product(range(2), repeat=3)}
    assert voxel_set(ch) == ref
    # map consistency and Morton order
    np.testing.assert_array_equal(ch.voxels[smap.children] // 2, g.voxels[smap.parent[smap.children]])
    for p in rng.choice(g.n_voxels, 10, replace=False):
        kids = smap.children_of(p)
        assert len(kids) == 8 and np.all(smap.parent[kids] == p)
    assert np.all(np.diff(morton_encode(ch.voxels).astype(np.int64)) > 0)
    np.testing.assert_allclose(ch.domain, g.domain)


def test_subdivide_errors():
    g = build_grid([(0, 0, 0)], 4)
    with pytest.raises(ValueError):
        subdivide(g, 1)
    big = build_grid([(0, 0, 0)], 2**20)
    with pytest.raises(OverflowError):
        subdivide(big, 2)


def test_occupancy_basic():
    g = build_grid([(0, 0, 0)], 2)
    ch, _ = subdivide(g, 2)
    assert not gt_occupancy(ch, np.zeros((0, 3))).any()
    occ = gt_occupancy(ch, [[-0.9, -0.9, -0.9]])
    assert occ.sum() == 1
    assert tuple(ch.voxels[occ][0]) == (0, 0, 0)


def test_occupancy_matches_voxelize():
    pc = sample_surface(icosphere(0.6, 4), 20000, 0)
    coarse = voxelize_points(pc, 32)
    ch, _ = subdivide(coarse, 2)
    occ = gt_occupancy(ch, pc)
    fine = voxelize_points(pc, 64)
    kept = set(map(tuple, ch.voxels[occ].tolist()))
    assert kept == voxel_set(fine) & voxel_set(ch)
    # every occupied fine voxel has its parent in the coarse grid, so this is the whole fine grid
    assert kept == voxel_set(fine)
    pruned = self_prune(ch, occ)
    assert voxel_set(pruned) == voxel_set(fine)
    assert voxel_set(pruned) <= voxel_set(ch)


def test_prune_identity_and_empty():
    g = sign_change_grid(sphere_sdf(0.6), 8)
    ch, _ = subdivide(g, 2)
    same = self_prune(ch, np.ones(ch.n_voxels, dtype=bool))
    np.testing.assert_array_equal(same.voxels, ch.voxels)
    np.testing.assert_array_equal(same.voxel_corners, ch.voxel_corners)
    empty = self_prune(ch, np.zeros(ch.n_voxels, dtype=bool))
    assert empty.n_voxels == 0 and empty.n_corners == 0
    with pytest.raises(ValueError):
        self_prune(ch, np.ones(3, dtype=bool))


def test_plane_points(rng):
    xy = rng.uniform(-0.99, 0.99, (30000, 2))
    pts = np.column_stack([xy, np.full(len(xy), 0.3)])
    coarse = voxelize_points(pts, 16)
    ch, _ = subdivide(coarse, 4)
    pruned = self_prune(ch, gt_occupancy(ch, pts))
    assert voxel_set(pruned) == voxel_set(voxelize_points(pts, 64))


def test_lower_hemisphere_pruned_open():
    sdf = sphere_sdf(0.6)
    g = sign_change_grid(sdf, 16)
    ch, _ = subdivide(g, 2)
    full = extract(ch, FlexParams.default(ch, sample_sdf(ch, sdf)))
    assert boundary_stats(full).boundary_edges == 0
    keep = ch.voxel_centers()[:, 2] > 0
    top = self_prune(ch, keep)
    bs = boundary_stats(extract(top, FlexParams.default(top, sample_sdf(top, sdf))))
    assert bs.boundary_edges > 0
    assert bs.boundary_loops == 1
    assert bs.nonmanifold_edges == 0
