import numpy as np
import pytest

from sparseflex.flexicubes import TriangleMesh
from sparseflex.grid import PointCloud
from sparseflex.meshio import (
    MeshParseError,
    check_orientation,
    load_mesh,
    load_points,
    normalize_mesh,
    sample_surface,
    save_mesh,
    save_points,
    signed_volume,
)
from sparseflex.shapes import hollow_sphere_mesh, icosphere

CUBE_V = """v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
"""
CUBE_TRI = """f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""
CUBE_QUAD = """f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
"""


def cube_mesh(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_V + CUBE_TRI)
    return load_mesh(p)


def test_cube_obj(tmp_path):
    m = cube_mesh(tmp_path)
    assert m.n_vertices == 8 and m.n_faces == 12
    assert signed_volume(m) == pytest.approx(1.0)
    check_orientation(m)


def test_quad_fan(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text(CUBE_V + CUBE_QUAD)
    m = load_mesh(p)
    assert m.n_faces == 12
    assert signed_volume(m) == pytest.approx(1.0)


def test_obj_slash_and_negative_indices(tmp_path):
    p = tmp_path / "s.obj"
    p.write_text("v 0 0 0\nvt 0 0\nvn 0 0 1\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/1/1 -1//1\n")
    m = load_mesh(p)
    np.testing.assert_array_equal(m.triangles, [[0, 1, 2]])


@pytest.mark.parametrize("suffix", [".obj", ".ply"])
def test_round_trip(tmp_path, suffix):
    m = icosphere(0.7, 4)
    r = np.random.default_rng(0)
    m = TriangleMesh(m.vertices + r.normal(scale=1e-3, size=m.vertices.shape), m.triangles)
    assert m.n_faces >= 5000
    big = TriangleMesh(np.vstack([m.vertices, m.vertices + 2]),
                       np.vstack([m.triangles, m.triangles + m.n_vertices]))
    assert big.n_faces >= 10000
    save_mesh(big, tmp_path / ("m" + suffix))
    back = load_mesh(tmp_path / ("m" + suffix))
    assert np.max(np.abs(back.vertices - big.vertices)) < 1e-6
    np.testing.assert_array_equal(back.triangles, big.triangles)


def test_parse_errors(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 x\n")
    with pytest.raises(MeshParseError, match="line 2"):
        load_mesh(p)
    p.write_text("v 0 0 0\nf 1 2 3\n")
    with pytest.raises(MeshParseError):
        load_mesh(p)
    q = tmp_path / "bad.ply"
    q.write_bytes(b"ply\nformat ascii 1.0\nend_header\n")
    with pytest.raises(MeshParseError):
        load_mesh(q)
    save_mesh(icosphere(0.5, 1), q)
    q.write_bytes(q.read_bytes()[:-7])
    with pytest.raises(MeshParseError, match="offset"):
        load_mesh(q)
    with pytest.raises(ValueError):
        load_mesh(tmp_path / "x.stl")


def test_normalize_box(tmp_path):
    m = cube_mesh(tmp_path)
    m = TriangleMesh(m.vertices * 2, m.triangles)
    n, tf = normalize_mesh(m)
    np.testing.assert_allclose(tf.center, [1, 1, 1])
    assert tf.scale == pytest.approx(0.95)
    np.testing.assert_allclose(n.vertices.min(0), -0.95)
    np.testing.assert_allclose(n.vertices.max(0), 0.95)


def test_normalize_idempotent_and_inverse(rng):
    m = TriangleMesh(rng.normal(size=(50, 3)) * 3 + 7, rng.integers(0, 50, (80, 3)))
    tri = m.triangles
    tri = tri[(tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2]) & (tri[:, 0] != tri[:, 2])]
    m = TriangleMesh(m.vertices, tri)
    n, tf = normalize_mesh(m)
    np.testing.assert_allclose(tf.inverse(n.vertices), m.vertices, atol=1e-9)
    n2, tf2 = normalize_mesh(n)
    np.testing.assert_allclose(n2.vertices, n.vertices, atol=1e-12)
    assert tf2.scale == pytest.approx(1.0, abs=1e-12)


def test_normalize_degenerate():
    with pytest.raises(ValueError):
        normalize_mesh(TriangleMesh(np.ones((3, 3)), [[0, 1, 2]]))


def test_sample_plane():
    v = np.array([[0.1, 0.2, 0.3], [1.0, -0.5, 0.2], [0.3, 0.9, -0.4]])
    m = TriangleMesh(v, [[0, 1, 2]])
    pc = sample_surface(m, 100, 0)
    n = m.face_normals()[0]
    np.testing.assert_allclose((pc.points - v[0]) @ n, 0, atol=1e-9)
    np.testing.assert_allclose(pc.normals, np.tile(n, (100, 1)))
    # inside the triangle: all barycentrics nonnegative
    sol = np.linalg.lstsq(np.column_stack([v[1] - v[0], v[2] - v[0]]), (pc.points - v[0]).T, rcond=None)[0]
    assert np.all(sol > -1e-12) and np.all(sol.sum(0) < 1 + 1e-12)


def test_sample_area_weighting():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [2 + 3, 0, 0], [2, 1, 0]], dtype=float)
    m = TriangleMesh(v, [[0, 1, 2], [3, 4, 5]])
    pc = sample_surface(m, 10000, 3)
    k = int(np.sum(pc.points[:, 0] < 1.5))
    sigma = np.sqrt(10000 * 0.25 * 0.75)
    assert abs(k - 2500) <= 3 * sigma


def test_sample_deterministic():
    m = icosphere(0.6, 2)
    a, b = sample_surface(m, 500, 9), sample_surface(m, 500, 9)
    assert a.points.tobytes() == b.points.tobytes()
    assert sample_surface(m, 500, 10).points.tobytes() != a.points.tobytes()


def test_sample_errors():
    m = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float), [[0, 1, 2]])
    with pytest.raises(ValueError):
        sample_surface(m, 10, 0)
    with pytest.raises(ValueError):
        sample_surface(icosphere(0.5, 1), 0, 0)


def test_orientation_check(tmp_path):
    m = cube_mesh(tmp_path)
    with pytest.raises(ValueError):
        check_orientation(TriangleMesh(m.vertices, m.triangles[:, ::-1]))
    check_orientation(hollow_sphere_mesh(0.6, 0.3, 2))
    # open meshes are not checked
    check_orientation(TriangleMesh(m.vertices, m.triangles[:-1, ::-1]))


def test_points_round_trip(tmp_path, rng):
    n = rng.normal(size=(40, 3))
    pc = PointCloud(rng.normal(size=(40, 3)), n / np.linalg.norm(n, axis=1, keepdims=True))
    save_points(pc, tmp_path / "p.bin")
    back = load_points(tmp_path / "p.bin")
    np.testing.assert_array_equal(back.points, pc.points)
    np.testing.assert_array_equal(back.normals, pc.normals)
    pc = PointCloud(rng.normal(size=(5, 3)))
    save_points(pc, tmp_path / "q.bin")
    assert load_points(tmp_path / "q.bin").normals is None
