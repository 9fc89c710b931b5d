"""OBJ / PLY mesh I/O, normalisation into the unit domain and surface sampling."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flexicubes import TriangleMesh
from .grid import PointCloud

__all__ = [
    "MeshParseError",
    "NormalizeTransform",
    "load_mesh",
    "save_mesh",
    "normalize_mesh",
    "sample_surface",
    "sample_surface_indexed",
    "save_points",
    "load_points",
    "signed_volume",
    "check_orientation",
]

NORMALIZED_HALF_EXTENT = 0.95


class MeshParseError(ValueError):
    def __init__(self, path, where, message):
        super().__init__(f"{path}:{where}: {message}")
        self.path, self.where = path, where


def load_mesh(path):
    """Load an ASCII OBJ or binary little-endian PLY file."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".ply":
        return _load_ply(path)
    raise ValueError(f"{path}: unsupported mesh format {suffix!r}")


def save_mesh(mesh, path):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        _save_obj(mesh, path)
    elif suffix == ".ply":
        _save_ply(mesh, path)
    else:
        raise ValueError(f"{path}: unsupported mesh format {suffix!r}")


def _load_obj(path):
    verts, faces = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError("vertex needs three coordinates")
                elif tag == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    if len(idx) < 3:
                        raise ValueError("face needs at least three vertices")
                    faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
            except ValueError as exc:
                raise MeshParseError(path, f"line {lineno}", str(exc)) from None
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        raise MeshParseError(path, "faces", "vertex index out of range")
    return TriangleMesh(v, f)


def _save_obj(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"# {mesh.n_vertices} vertices, {mesh.n_faces} faces\n")
        np.savetxt(fh, mesh.vertices, fmt="v %.17g %.17g %.17g")
        np.savetxt(fh, mesh.triangles + 1, fmt="f %d %d %d")


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _load_ply(path):
    data = path.read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MeshParseError(path, "offset 0", "missing PLY header")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    offset = end + len(b"end_header\n")
    if "format binary_little_endian 1.0" not in header:
        raise MeshParseError(path, "header", "only binary_little_endian PLY is supported")
    elements = []
    for line in header:
        tok = line.split()
        if tok and tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok and tok[0] == "property":
            elements[-1][2].append(tok[1:])
    verts = faces = None
    for name, count, props in elements:
        if any(p[0] == "list" for p in props):
            if len(props) != 1:
                raise MeshParseError(path, f"offset {offset}", "mixed list properties unsupported")
            _, ctype, itype, _ = props[0]
            cdt, idt = np.dtype("<" + _PLY_TYPES[ctype]), np.dtype("<" + _PLY_TYPES[itype])
            rows = []
            for _ in range(count):
                if offset + cdt.itemsize > len(data):
                    raise MeshParseError(path, f"offset {offset}", "truncated face list")
                n = int(np.frombuffer(data, cdt, 1, offset)[0])
                offset += cdt.itemsize
                if offset + n * idt.itemsize > len(data):
                    raise MeshParseError(path, f"offset {offset}", "truncated face list")
                idx = np.frombuffer(data, idt, n, offset).astype(np.int64)
                offset += n * idt.itemsize
                rows.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, n - 1))
            if name == "face":
                faces = np.array(rows, dtype=np.int64).reshape(-1, 3)
        else:
            dt = np.dtype([(p[1], "<" + _PLY_TYPES[p[0]]) for p in props])
            if offset + count * dt.itemsize > len(data):
                raise MeshParseError(path, f"offset {offset}", f"truncated {name} block")
            arr = np.frombuffer(data, dt, count, offset)
            offset += count * dt.itemsize
            if name == "vertex":
                verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
    if verts is None:
        raise MeshParseError(path, "header", "no vertex element")
    faces = np.zeros((0, 3), dtype=np.int64) if faces is None else faces
    if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
        raise MeshParseError(path, "faces", "vertex index out of range")
    return TriangleMesh(verts, faces)


def _save_ply(mesh, path):
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    face_dt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    faces = np.empty(mesh.n_faces, dtype=face_dt)
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
        fh.write(faces.tobytes())


@dataclass(frozen=True)
class NormalizeTransform:
    """``normalized = (original - center) * scale``."""

    center: np.ndarray
    scale: float

    def apply(self, points):
        return (np.asarray(points) - self.center) * self.scale

    def inverse(self, points):
        return np.asarray(points) / self.scale + self.center


def normalize_mesh(mesh, half_extent=NORMALIZED_HALF_EXTENT):
    """Centre the bounding box at the origin and scale its largest half-extent to ``half_extent``."""
    if mesh.n_vertices == 0:
        raise ValueError("cannot normalise an empty mesh")
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    extent = float(np.max(hi - lo)) / 2.0
    if extent <= 0:
        raise ValueError("cannot normalise a mesh with zero extent")
    tf = NormalizeTransform((lo + hi) / 2.0, half_extent / extent)
    return TriangleMesh(tf.apply(mesh.vertices), mesh.triangles.copy()), tf


def signed_volume(mesh):
    """Volume enclosed by the mesh, positive when faces wind counter-clockwise seen from outside."""
    v = mesh.vertices[mesh.triangles]
    return float(np.einsum("fi,fi->f", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


def check_orientation(mesh):
    """Raise ``ValueError`` when a closed mesh has inward-facing normals.

    Open meshes have no well-defined volume and pass unchecked.
    """
    if mesh.n_faces == 0:
        return
    t = mesh.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    if np.all(counts == 2) and signed_volume(mesh) < 0:
        raise ValueError("closed mesh has negative signed volume; faces are wound inwards")


def sample_surface_indexed(mesh, n, seed):
    """Area-weighted uniform samples; returns ``(points, face_index, barycentric)``."""
    if n < 1:
        raise ValueError("need at least one sample")
    areas = mesh.face_areas() if mesh.n_faces else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    face = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    face = np.minimum(face, mesh.n_faces - 1)
    r1, r2 = rng.random(n), rng.random(n)
    sq = np.sqrt(r1)
    bary = np.stack([1.0 - sq, sq * (1.0 - r2), sq * r2], axis=1)
    v = mesh.vertices[mesh.triangles[face]]
    points = np.einsum("nk,nki->ni", bary, v)
    return points, face, bary


def sample_surface(mesh, n, seed):
    """Area-weighted uniform surface samples carrying flat face normals."""
    points, face, _ = sample_surface_indexed(mesh, n, seed)
    normals = mesh.face_normals()[face]
    return PointCloud(points, normals)


_POINT_MAGIC = b"SPFXPTS\0"


def save_points(pc, path):
    """Binary point table: magic, uint32 flags (bit0 = normals), uint64 count, float64 rows."""
    has_n = pc.normals is not None
    rows = np.hstack([pc.points, pc.normals]) if has_n else pc.points
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sIQ", _POINT_MAGIC, int(has_n), len(pc)))
        fh.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())


def load_points(path):
    data = Path(path).read_bytes()
    magic, flags, count = struct.unpack_from("<8sIQ", data)
    if magic != _POINT_MAGIC:
        raise ValueError(f"{path}: not a point file")
    cols = 6 if flags & 1 else 3
    rows = np.frombuffer(data, "<f8", count * cols, struct.calcsize("<8sIQ")).reshape(count, cols)
    return PointCloud(rows[:, :3].copy(), rows[:, 3:].copy() if cols == 6 else None)

