"""Direct fitting of sparse Flexicubes parameters to a target mesh.

Each iteration samples cameras, shrinks every frustum to the requested
visibility ratio, extracts only the active voxels, renders prediction and
target with the same clipping planes and backpropagates the rendering loss
through the rasterizer and the extraction. The smoothness regulariser is
applied to the full grid.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .flexicubes import FlexParams, ParamGradients, clamp_params, extract, extract_backward
from .frustum import Camera, adapt_frustum
from .grid import voxelize_points
from .losses import LossWeights, flex_reg, render_loss
from .meshio import sample_surface, sample_surface_indexed
from .metrics import evaluate_meshes
from .render import rasterize, rasterize_backward
from .shapes import SHAPES

__all__ = [
    "FitConfig",
    "FitReport",
    "NumericalAbort",
    "Adam",
    "init_params",
    "sample_cameras",
    "fit",
    "fit_step_gradients",
]

logger = logging.getLogger(__name__)


class NumericalAbort(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass
class FitConfig:
    """Settings of :func:`fit`. ``interior_fraction=None`` means 0.25 for hollow targets, else 0."""

    resolution: int = 64
    iterations: int = 400
    lr: float = 1e-2
    lr_weights: float = 1e-3
    lr_delta_cells: bool = True
    lr_final: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    views: int = 4
    image_size: int = 128
    visibility: float = 0.3
    frustum_tol: float = 0.02
    frustum_max_iter: int = 32
    weights: LossWeights = field(default_factory=lambda: LossWeights(flex=1.0))
    seed: int = 0
    objective: str = "render"
    hollow: bool = False
    interior_fraction: float = None
    init_source: str = "analytic"
    init_shape: str = "sphere"
    init_noise: float = 0.05
    voxel_samples: int = 200_000
    voxel_margin: float = 0.5
    chamfer_samples: int = 20_000
    eval_samples: int = 100_000
    orbit_fov_deg: float = 66.0
    interior_fov_deg: float = 90.0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 < self.visibility <= 1:
            raise ValueError("visibility must lie in (0, 1]")
        if self.objective not in ("render", "chamfer", "mixed"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.init_source not in ("analytic", "constant", "random"):
            raise ValueError(f"unknown init source {self.init_source!r}")
        if self.views < 1 or self.image_size < 1 or self.resolution < 1:
            raise ValueError("views, image_size and resolution must be positive")
        frac = self.interior_ratio
        if not 0 <= frac <= 1:
            raise ValueError("interior_fraction must lie in [0, 1]")

    @property
    def interior_ratio(self):
        if self.interior_fraction is None:
            return 0.25 if self.hollow else 0.0
        return float(self.interior_fraction)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fit config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d


@dataclass
class FitReport:
    loss_trace: list
    init_metrics: dict
    final_metrics: dict
    wall_clock_s: float
    peak_active_voxels: int
    n_voxels: int
    n_corners: int
    iterations: int
    config: dict

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


class Adam:
    """Adam over named parameter arrays with per-group learning rates."""

    def __init__(self, lrs, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = dict(lrs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, params, grads, scale=1.0):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for name, lr in self.lrs.items():
            p = getattr(params, name)
            g = getattr(grads, "d_" + name)
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= scale * lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def init_params(grid, source="analytic", sdf=None, noise=0.0, seed=0):
    """Initial parameters: analytic SDF samples (plus uniform noise), constant +0.5, or signed random."""
    rng = np.random.default_rng(seed)
    if source == "analytic":
        if sdf is None:
            raise ValueError("analytic initialisation needs an sdf callable")
        s = np.asarray(sdf(grid.corner_positions()), dtype=np.float64)
        if noise:
            s = s + rng.uniform(-noise, noise, size=s.shape)
    elif source == "constant":
        s = np.full(grid.n_corners, 0.5)
    elif source == "random":
        amp = noise or float(np.min(grid.cell_size))
        s = rng.uniform(-amp, amp, size=grid.n_corners)
    else:
        raise ValueError(f"unknown init source {source!r}")
    return FlexParams.default(grid, s)


def sample_cameras(seed, count, mode="orbit", bbox=((-1, -1, -1), (1, 1, 1)), radius=None,
                   fov_deg=None, aspect=1.0):
    """Random cameras around or inside a box.

    ``orbit`` places cameras uniformly on a sphere of twice the bounding
    radius looking at the box centre, with the near plane touching the
    bounding sphere. ``interior`` places them uniformly inside the box with
    uniformly random view directions.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    rng = np.random.default_rng(seed)
    box = np.asarray(bbox, dtype=np.float64)
    center = box.mean(axis=0)
    r = float(radius) if radius is not None else float(np.linalg.norm(box[1] - box[0]) / 2)
    cams = []
    for _ in range(count):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        if mode == "orbit":
            fov = np.deg2rad(fov_deg or 66.0)
            cams.append(Camera.look_at(center + 2 * r * d, center, (0, 0, 1), fov, aspect, r, 4 * r))
        elif mode == "interior":
            fov = np.deg2rad(fov_deg or 90.0)
            pos = box[0] + rng.random(3) * (box[1] - box[0])
            cams.append(Camera.look_at(pos, pos + d, (0, 0, 1), fov, aspect, 1e-2 * r, 4 * r))
        else:
            raise ValueError(f"unknown camera mode {mode!r}")
    return cams


def _view_gradients(grid, params, target, cam, cfg, stats):
    """Render loss and parameter gradients for one sectional view."""
    fr = adapt_frustum(grid, cam, cfg.visibility, cfg.frustum_tol, cfg.frustum_max_iter)
    stats["peak_active"] = max(stats["peak_active"], len(fr.active))
    mesh = extract(grid, params, fr.active)
    c = fr.camera
    size = cfg.image_size
    gt = rasterize(target, c, size, size)
    pred = rasterize(mesh, c, size, size)
    loss, d_depth, d_normal = render_loss(pred, gt, cfg.weights)
    if mesh.n_faces == 0:
        return loss, None
    d_vertices = rasterize_backward(mesh, c, pred, d_depth, d_normal)
    return loss, extract_backward(grid, params, mesh, d_vertices)


def _chamfer_gradients(grid, params, target_tree, target_points, n, seed):
    mesh = extract(grid, params)
    if mesh.n_faces == 0 or not mesh.face_areas().sum() > 0:
        return 0.0, None
    pts, face, bary = sample_surface_indexed(mesh, n, seed)
    d_pt, nn_t = target_tree.query(pts)
    d_tp, nn_p = cKDTree(pts).query(target_points)
    loss = 0.5 * (np.mean(d_pt**2) + np.mean(d_tp**2))
    g = (pts - target_points[nn_t]) / len(pts)
    np.add.at(g, nn_p, (pts[nn_p] - target_points) / len(target_points))
    d_vertices = np.zeros_like(mesh.vertices)
    tri = mesh.triangles[face]
    for k in range(3):
        for ax in range(3):
            d_vertices[:, ax] += np.bincount(tri[:, k], bary[:, k] * g[:, ax], mesh.n_vertices)
    return float(loss), extract_backward(grid, params, mesh, d_vertices)


def fit_step_gradients(grid, params, target, cams, cfg):
    """Objective value and gradients of one iteration over the given cameras."""
    w = cfg.weights
    grads = ParamGradients.zeros_like(params)
    stats = {"peak_active": 0}
    total = 0.0
    for cam in cams:
        loss, g = _view_gradients(grid, params, target, cam, cfg, stats)
        total += w.render * loss / len(cams)
        if g is not None:
            grads.add_(g, w.render / len(cams))
    return total, grads, stats


def _target_bounds(target):
    lo, hi = target.vertices.min(axis=0), target.vertices.max(axis=0)
    center = (lo + hi) / 2
    radius = float(np.max(np.linalg.norm(target.vertices - center, axis=1)))
    return np.stack([lo, hi]), radius


def fit(target, cfg=None, grid=None, params=None):
    """Fit parameters to ``target``; returns ``(params, grid, report)``.

    The grid defaults to the voxelised surface samples of the target and the
    parameters to :func:`init_params` as configured.
    """
    cfg = cfg or FitConfig()
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    if grid is None:
        pc = sample_surface(target, cfg.voxel_samples, cfg.seed)
        grid = voxelize_points(pc, cfg.resolution, margin=cfg.voxel_margin)
    if params is None:
        sdf = SHAPES[cfg.init_shape][0]() if cfg.init_source == "analytic" else None
        params = init_params(grid, cfg.init_source, sdf, cfg.init_noise, cfg.seed)
    else:
        params = params.copy()
    params.check(grid)

    bbox, radius = _target_bounds(target)
    init_metrics = evaluate_meshes(extract(grid, params), target, cfg.eval_samples, cfg.seed).to_dict()
    target_points = target_tree = None
    if cfg.objective in ("chamfer", "mixed"):
        target_points = sample_surface(target, cfg.chamfer_samples, cfg.seed + 7).points
        target_tree = cKDTree(target_points)

    # delta lives in world units; by default its step is measured in cells
    lr_delta = cfg.lr * float(np.min(grid.cell_size)) if cfg.lr_delta_cells else cfg.lr
    opt = Adam({"s": cfg.lr, "delta": lr_delta, "alpha": cfg.lr_weights, "beta": cfg.lr_weights},
               cfg.beta1, cfg.beta2, cfg.adam_eps)
    w = cfg.weights
    trace, peak = [], 0
    for it in range(cfg.iterations):
        seed = int(rng.integers(2**31))
        n_in = int(rng.binomial(cfg.views, cfg.interior_ratio)) if cfg.interior_ratio else 0
        total, grads = 0.0, ParamGradients.zeros_like(params)
        if cfg.objective in ("render", "mixed"):
            cams = sample_cameras(seed, cfg.views - n_in, "orbit", bbox, radius, cfg.orbit_fov_deg)
            cams += sample_cameras(seed + 1, n_in, "interior", bbox, radius, cfg.interior_fov_deg)
            total, grads, stats = fit_step_gradients(grid, params, target, cams, cfg)
            peak = max(peak, stats["peak_active"])
        if cfg.objective in ("chamfer", "mixed"):
            loss, g = _chamfer_gradients(grid, params, target_tree, target_points, cfg.chamfer_samples, seed)
            total += w.render * loss
            if g is not None:
                grads.add_(g, w.render)
            peak = max(peak, grid.n_voxels)
        reg, g_reg = flex_reg(grid, params, w)
        total += w.flex * reg
        grads.add_(g_reg, w.flex)
        if not np.isfinite(total):
            raise NumericalAbort(f"non-finite loss {total!r} at iteration {it}")
        # cosine decay from 1 to lr_final
        frac = it / max(cfg.iterations - 1, 1)
        scale = cfg.lr_final + (1 - cfg.lr_final) * 0.5 * (1 + np.cos(np.pi * frac))
        opt.step(params, grads, scale)
        clamp_params(grid, params)
        trace.append(float(total))
        if it % 50 == 0:
            logger.info("iter %d loss %.6f", it, total)

    final_metrics = evaluate_meshes(extract(grid, params), target, cfg.eval_samples, cfg.seed).to_dict()
    report = FitReport(trace, init_metrics, final_metrics, time.perf_counter() - start, int(peak),
                       grid.n_voxels, grid.n_corners, cfg.iterations, cfg.to_dict())
    return params, grid, report
