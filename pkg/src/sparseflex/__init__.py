"""Sparse-voxel Flexicubes: extraction, sectional rendering and direct fitting."""

__version__ = "0.1.0"

from ._validation import ContractError
from .flexicubes import FlexParams, ParamGradients, TriangleMesh, extract, extract_backward
from .frustum import Camera, active_voxels, adapt_frustum, mvp
from .grid import PointCloud, SparseGrid, build_grid, load_grid, save_grid, voxelize_points
from .losses import LossWeights, flex_reg, prune_loss, render_loss, ssim
from .meshio import load_mesh, normalize_mesh, sample_surface, save_mesh
from .metrics import MetricReport, boundary_stats, chamfer, evaluate_meshes, fscore
from .optimize import FitConfig, FitReport, fit, init_params, sample_cameras
from .render import RenderBuffers, rasterize, rasterize_backward
from .upsample import gt_occupancy, self_prune, subdivide

__all__ = [
    "ContractError",
    "FlexParams",
    "ParamGradients",
    "TriangleMesh",
    "extract",
    "extract_backward",
    "Camera",
    "active_voxels",
    "adapt_frustum",
    "mvp",
    "PointCloud",
    "SparseGrid",
    "build_grid",
    "load_grid",
    "save_grid",
    "voxelize_points",
    "LossWeights",
    "flex_reg",
    "prune_loss",
    "render_loss",
    "ssim",
    "load_mesh",
    "normalize_mesh",
    "sample_surface",
    "save_mesh",
    "MetricReport",
    "boundary_stats",
    "chamfer",
    "evaluate_meshes",
    "fscore",
    "FitConfig",
    "FitReport",
    "fit",
    "init_params",
    "sample_cameras",
    "RenderBuffers",
    "rasterize",
    "rasterize_backward",
    "gt_occupancy",
    "self_prune",
    "subdivide",
]
