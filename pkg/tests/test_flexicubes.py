import itertools

import numpy as np
import pytest

from oracles import GRADIENT_SUITES, compare_with_dense, random_flex_setup
from sparseflex._validation import ContractError
from sparseflex.flexicubes import (
    FlexParams,
    TriangleMesh,
    clamp_params,
    edge_crossing,
    extract,
    extract_backward,
    load_params,
    save_params,
)
from sparseflex.grid import build_grid, decode_edge, edge_adjacent_voxels
from sparseflex.metrics import boundary_stats
from sparseflex.shapes import plane_sdf, sample_sdf, sign_change_grid, sphere_sdf


def analytic(sdf, n, domain=None):
    g = sign_change_grid(sdf, n, domain)
    return g, FlexParams.default(g, sample_sdf(g, sdf))


def test_crossing_symmetric():
    np.testing.assert_allclose(edge_crossing((0, 0, 0), (1, 0, 0), 1, -1), (0.5, 0, 0))


def test_crossing_lerp():
    np.testing.assert_allclose(edge_crossing((0, 0, 0), (1, 0, 0), 3, -1), (0.75, 0, 0))


def test_crossing_alpha_weighted():
    x = edge_crossing((0, 0, 0), (1, 0, 0), 1, -1, 2, 1)
    # independent scalar evaluation of t = a s_a / (a s_a - b s_b)
    t = (2 * 1) / (2 * 1 - 1 * -1)
    np.testing.assert_allclose(x, (t, 0, 0), atol=1e-15)
    np.testing.assert_allclose(x, (2 / 3, 0, 0), atol=1e-15)


def test_crossing_same_sign():
    with pytest.raises(ContractError):
        edge_crossing((0, 0, 0), (1, 0, 0), 1, 2)
    # zero counts as positive
    with pytest.raises(ContractError):
        edge_crossing((0, 0, 0), (1, 0, 0), 0.0, 1.0)


def test_all_positive_is_empty():
    g = build_grid(list(itertools.product(range(4), repeat=3)), 4)
    m = extract(g, FlexParams.default(g, np.ones(g.n_corners)))
    assert m.n_faces == 0 and m.n_vertices == 0


def test_plane_full_grid():
    g = build_grid(list(itertools.product(range(4), repeat=3)), 4)
    sdf = plane_sdf(0.25)
    m = extract(g, FlexParams.default(g, sample_sdf(g, sdf)))
    assert m.n_faces > 0
    used = np.unique(m.triangles)
    np.testing.assert_allclose(m.vertices[used, 2], 0.25, atol=1e-12)
    assert boundary_stats(m).boundary_edges > 0
    assert np.all(m.face_normals()[:, 2] > 0.999)


def test_sphere_closed():
    g, p = analytic(sphere_sdf(0.6), 16)
    m = extract(g, p)
    bs = boundary_stats(m)
    assert bs.boundary_edges == 0
    assert bs.euler_characteristic == 2
    assert bs.nonmanifold_edges == 0


def test_orientation_negative_to_positive():
    g, p = analytic(sphere_sdf(0.6), 16)
    m = extract(g, p)
    centers = m.vertices[m.triangles].mean(axis=1)
    assert np.all(np.sum(m.face_normals() * centers, axis=1) > 0)


@pytest.mark.parametrize("n", [8, 16])
@pytest.mark.parametrize("sdf", [sphere_sdf(0.6), plane_sdf(0.25)], ids=["sphere", "plane"])
def test_dense_oracle(sdf, n):
    g, p = analytic(sdf, n)
    same_count, err, same_faces = compare_with_dense(g, extract(g, p), sdf)
    assert same_count and same_faces
    assert err < 1e-9


def test_provenance_and_order():
    g, p = analytic(sphere_sdf(0.6), 8)
    m = extract(g, p)
    assert np.all(np.diff(m.face_provenance) >= 0)
    np.testing.assert_array_equal(m.face_provenance[::2], m.face_provenance[1::2])
    for k in range(0, m.n_faces, 2):
        eid = m.face_provenance[k]
        ring = edge_adjacent_voxels(g, eid)
        assert len(ring) == 4
        assert set(m.vertex_provenance[m.triangles[k:k + 2].ravel()]) == set(ring)
    # each emitted edge really changes sign
    coords, axis = decode_edge(m.face_provenance, g.resolution)
    a = g.find_corners(coords)
    b = g.find_corners(coords + np.eye(3, dtype=int)[axis])
    assert np.all((p.s[a] < 0) != (p.s[b] < 0))


def test_sectional_subset_property(rng):
    g, p = analytic(sphere_sdf(0.6), 16)
    full = extract(g, p)
    for _ in range(5):
        act = rng.random(g.n_voxels) < 0.6
        part = extract(g, p, act)
        expected = []
        for eid in np.unique(full.face_provenance):
            if all(act[v] for v in edge_adjacent_voxels(g, eid)):
                expected.append(eid)
        np.testing.assert_array_equal(np.unique(part.face_provenance), expected)


def test_active_ids_equal_mask(rng):
    g, p = analytic(sphere_sdf(0.6), 8)
    ids = np.flatnonzero(rng.random(g.n_voxels) < 0.5)
    mask = np.zeros(g.n_voxels, dtype=bool)
    mask[ids] = True
    a, b = extract(g, p, ids), extract(g, p, mask)
    np.testing.assert_array_equal(a.triangles, b.triangles)
    np.testing.assert_array_equal(a.vertices, b.vertices)


def test_deterministic_and_order_independent(rng):
    coords = sign_change_grid(sphere_sdf(0.6), 16).voxels
    g1 = build_grid(coords, 16)
    g2 = build_grid(coords[rng.permutation(len(coords))], 16)
    s = sphere_sdf(0.6)
    m1 = extract(g1, FlexParams.default(g1, sample_sdf(g1, s)))
    m2 = extract(g2, FlexParams.default(g2, sample_sdf(g2, s)))
    assert m1.vertices.tobytes() == m2.vertices.tobytes()
    assert m1.triangles.tobytes() == m2.triangles.tobytes()


def test_scale_equivariance():
    sdf = sphere_sdf(0.6)
    g, p = analytic(sdf, 12)
    m = extract(g, p)
    g2 = build_grid(g.voxels, 12, [[-2.5] * 3, [2.5] * 3])
    p2 = FlexParams(p.s * 2.5, p.delta * 2.5, p.alpha, p.beta)
    np.testing.assert_allclose(extract(g2, p2).vertices, m.vertices * 2.5, atol=1e-12)


def test_shape_mismatch():
    g, p = analytic(sphere_sdf(0.6), 8)
    with pytest.raises(ValueError):
        extract(g, FlexParams(p.s[:-1], p.delta, p.alpha, p.beta))
    with pytest.raises(ValueError):
        extract(g, FlexParams(p.s, p.delta, -p.alpha, p.beta))


def test_backward_single_edge():
    g = build_grid([(0, 0, 0)], 1, [[0, 0, 0], [1, 1, 1]])
    s = np.ones(8)
    s[g.find_corners((1, 0, 0))] = -1.0
    s[g.find_corners((0, 0, 0))] = 1.0
    # only corner (1,0,0) is negative: three crossing edges; isolate the x edge through beta
    p = FlexParams.default(g, s)
    p.beta[:] = 1e-300
    p.beta[0, 0] = 1.0
    m = extract(g, p)
    np.testing.assert_allclose(m.vertices[0], (0.5, 0, 0), atol=1e-12)
    dv = np.array([[1.0, 0.0, 0.0]])
    grads = extract_backward(g, p, m, dv)
    a = g.find_corners((0, 0, 0))
    # dx/ds_a = -s_b / (s_a - s_b)^2 * (p_b - p_a)_x
    assert grads.d_s[a] == pytest.approx(0.25, abs=1e-9)
    h = 1e-5
    q = p.copy()
    q.s[a] += h
    xp = extract(g, q).vertices[0, 0]
    q.s[a] -= 2 * h
    xm = extract(g, q).vertices[0, 0]
    assert (xp - xm) / (2 * h) == pytest.approx(0.25, rel=1e-6)


def test_backward_zero_gradient():
    g, p = analytic(sphere_sdf(0.6), 8)
    m = extract(g, p)
    grads = extract_backward(g, p, m, np.zeros_like(m.vertices))
    for a in (grads.d_s, grads.d_delta, grads.d_alpha, grads.d_beta):
        assert not np.any(a)


def test_backward_untouched_zero():
    g, p = analytic(sphere_sdf(0.6), 8)
    m = extract(g, p)
    grads = extract_backward(g, p, m, np.ones_like(m.vertices))
    touched = np.zeros(g.n_corners, dtype=bool)
    touched[g.voxel_corners[m.vertex_provenance]] = True
    assert not np.any(grads.d_s[~touched])
    mixed = np.zeros(g.n_voxels, dtype=bool)
    mixed[m.vertex_provenance] = True
    assert not np.any(grads.d_alpha[~mixed]) and not np.any(grads.d_beta[~mixed])


@pytest.mark.parametrize("seed", range(25))
def test_backward_finite_differences(seed):
    fn, tol = GRADIENT_SUITES["extract_backward"]
    assert fn(seed) < tol


def test_backward_stale_mesh():
    r, g, p = random_flex_setup(0)
    m = extract(g, p)
    q = p.copy()
    q.delta += 1e-3 * g.cell_size
    with pytest.raises(ContractError):
        extract_backward(g, q, m, np.zeros_like(m.vertices))
    with pytest.raises(ContractError):
        extract_backward(g, p, TriangleMesh(m.vertices, m.triangles), np.zeros_like(m.vertices))
    with pytest.raises(ContractError):
        extract_backward(g, p, m, np.zeros((1, 3)))


def test_clamp_params():
    r, g, p = random_flex_setup(1)
    p.delta *= 10
    p.alpha[0, 0] = -1
    clamp_params(g, p)
    assert np.all(np.abs(p.delta) <= 0.5 * g.cell_size + 1e-15)
    assert p.alpha.min() > 0


def test_params_round_trip(tmp_path):
    r, g, p = random_flex_setup(2)
    save_params(p, tmp_path / "p.npz")
    q = load_params(tmp_path / "p.npz", g)
    for name in ("s", "delta", "alpha", "beta"):
        np.testing.assert_array_equal(getattr(p, name), getattr(q, name))


def test_mesh_rejects_degenerate():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[1, 1, 1]])
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])
