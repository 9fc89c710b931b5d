"""Time and accounted memory of dense, sparse and frustum-sectional extraction.

The measured pipeline is extraction followed by rendering at a fixed image
size; there is no neural decoding. Memory is accounted with explicit size
formulas over the live grid, parameter and mesh arrays::

    corners * (s + delta) + voxels * (alpha + beta) + vertices + triangles

with float64 parameters (8 + 24 bytes per corner, 64 + 96 per voxel) and the
mesh buffers at their in-memory sizes. Dense configurations whose accounted
size exceeds ``dense_budget`` are reported as skipped (``status=OOM``).
"""

import csv
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .flexicubes import FlexParams, extract
from .frustum import adapt_frustum
from .grid import build_grid
from .optimize import sample_cameras
from .render import rasterize
from .shapes import SHAPES, sample_sdf, sign_change_grid

__all__ = ["BenchRow", "BenchReport", "run_bench", "accounted_bytes", "ordering_violations"]

CORNER_BYTES = 8 + 3 * 8
VOXEL_BYTES = 8 * 8 + 12 * 8
DEFAULT_DENSE_BUDGET = 2**30

COLUMNS = ["resolution", "mode", "alpha", "time_ms", "peak_bytes", "voxels_total", "voxels_active",
           "corners_live", "faces", "status"]


@dataclass
class BenchRow:
    resolution: int
    mode: str
    alpha: float
    time_ms: float
    peak_bytes: int
    voxels_total: int
    voxels_active: int
    corners_live: int
    faces: int
    status: str = "ok"


@dataclass
class BenchReport:
    rows: list
    shape: str
    repeats: int
    seed: int
    image_size: int
    threads: int = 1
    note: str = field(default="extraction + render proxy; no neural decoding")

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# shape={self.shape} repeats={self.repeats} seed={self.seed} "
                  f"image_size={self.image_size} threads={self.threads}\n# {self.note}\n")
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            d = asdict(r)
            d["time_ms"] = f"{r.time_ms:.3f}"
            w.writerow(d)
        return buf.getvalue()

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    def gnuplot(self):
        """Whitespace-separated table, one block per mode, for gnuplot."""
        lines = []
        for key in sorted({(r.mode, r.alpha) for r in self.rows}):
            lines.append(f"# {key[0]} alpha={key[1]}")
            for r in self.rows:
                if (r.mode, r.alpha) == key and r.status == "ok":
                    lines.append(f"{r.resolution} {r.time_ms:.3f} {r.peak_bytes}")
            lines.append("\n")
        return "\n".join(lines)

    def row(self, resolution, mode, alpha=1.0):
        for r in self.rows:
            if r.resolution == resolution and r.mode == mode and np.isclose(r.alpha, alpha):
                return r
        raise KeyError((resolution, mode, alpha))


def accounted_bytes(n_corners, n_voxels, mesh=None):
    """Bytes of live state under the size formula in the module docstring."""
    total = int(n_corners) * CORNER_BYTES + int(n_voxels) * VOXEL_BYTES
    if mesh is not None:
        total += mesh.vertices.nbytes + mesh.triangles.nbytes
    return total


def _dense_grid(n, domain):
    axis = np.arange(n)
    coords = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
    return build_grid(coords, n, domain)


def _median_ms(fn, repeats):
    # one untimed call absorbs JIT compilation and first-touch allocation
    out = fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times)), out


def run_bench(shape="sphere", resolutions=(64, 128, 256), alphas=(0.1, 0.3), repeats=5, seed=0,
              image_size=128, dense_budget=DEFAULT_DENSE_BUDGET, dense=True):
    """Benchmark every resolution in dense, full sparse and sectional modes.

    Parameters
    ----------
    shape : str
        Key of :data:`sparseflex.shapes.SHAPES` providing the analytic SDF.
    resolutions, alphas : sequences
        Lattice resolutions and visibility ratios of the sectional runs.
    repeats : int
        Timings are the median over this many runs.
    dense_budget : int
        Dense runs whose accounted bytes exceed this are skipped.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}")
    sdf = SHAPES[shape][0]()
    domain = np.array([[-1.0] * 3, [1.0] * 3])
    cam = sample_cameras(seed, 1, "orbit", domain)[0]
    rows = []
    for n in resolutions:
        grid = sign_change_grid(sdf, n, domain)
        params = FlexParams.default(grid, sample_sdf(grid, sdf))

        def full(g=grid, p=params):
            mesh = extract(g, p)
            rasterize(mesh, cam, image_size, image_size)
            return mesh

        ms, mesh = _median_ms(full, repeats)
        rows.append(BenchRow(n, "sparse", 1.0, ms, accounted_bytes(grid.n_corners, grid.n_voxels, mesh),
                             grid.n_voxels, grid.n_voxels, grid.n_corners, mesh.n_faces))

        for a in sorted(alphas):
            def section(g=grid, p=params, a=a):
                fr = adapt_frustum(g, cam, a)
                mesh = extract(g, p, fr.active)
                rasterize(mesh, fr.camera, image_size, image_size)
                return fr, mesh

            ms, (fr, mesh) = _median_ms(section, repeats)
            live = len(np.unique(grid.voxel_corners[fr.active]))
            rows.append(BenchRow(n, "sectional", float(a), ms, accounted_bytes(live, len(fr.active), mesh),
                                 grid.n_voxels, len(fr.active), live, mesh.n_faces,
                                 "ok" if fr.reached else "best-effort"))

        if dense:
            nd, nc = n**3, (n + 1) ** 3
            estimate = accounted_bytes(nc, nd)
            if estimate > dense_budget:
                rows.append(BenchRow(n, "dense", 1.0, float("nan"), estimate, nd, nd, nc, 0, "OOM"))
                continue
            dgrid = _dense_grid(n, domain)
            dparams = FlexParams.default(dgrid, sample_sdf(dgrid, sdf))

            def dense_run(g=dgrid, p=dparams):
                mesh = extract(g, p)
                rasterize(mesh, cam, image_size, image_size)
                return mesh

            ms, mesh = _median_ms(dense_run, repeats)
            rows.append(BenchRow(n, "dense", 1.0, ms, accounted_bytes(nc, nd, mesh), nd, nd, nc, mesh.n_faces))
            del dgrid, dparams
    return BenchReport(rows, shape, repeats, seed, image_size)


def ordering_violations(report):
    """Resolutions where sectional(small alpha) <= ... <= sparse <= dense fails in time or bytes.

    Skipped dense rows count as infinitely expensive.
    """
    problems = []
    for n in sorted({r.resolution for r in report.rows}):
        chain = sorted((r for r in report.rows if r.resolution == n and r.mode == "sectional"),
                       key=lambda r: r.alpha)
        chain += [r for r in report.rows if r.resolution == n and r.mode == "sparse"]
        chain += [r for r in report.rows if r.resolution == n and r.mode == "dense"]
        for key in ("time_ms", "peak_bytes"):
            vals = [np.inf if r.status == "OOM" else getattr(r, key) for r in chain]
            for (ra, va), (rb, vb) in zip(zip(chain, vals), zip(chain[1:], vals[1:])):
                if not va <= vb:
                    problems.append(f"N_r={n} {key}: {ra.mode}({ra.alpha}) {va} > {rb.mode}({rb.alpha}) {vb}")
    return problems
