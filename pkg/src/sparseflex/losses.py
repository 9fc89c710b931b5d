"""Rendering loss, windowed SSIM, voxel-pruning BCE and the smoothness regulariser."""

from dataclasses import asdict, dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .flexicubes import ParamGradients

__all__ = ["LossWeights", "render_loss", "ssim", "prune_loss", "flex_reg", "smoothness"]

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PRUNE_EPS = 1e-7


@dataclass
class LossWeights:
    """Loss weights.

    ``render``, ``prune``, ``kl`` and ``flex`` weight the top-level objective;
    ``depth``, ``normal``, ``mask`` and ``ssim`` weight the rendering loss;
    ``flex_alpha``, ``flex_beta`` and ``flex_delta`` weight the shrinkage
    terms inside the regulariser. ``kl`` is carried for config compatibility
    and never used.
    """

    render: float = 1.0
    prune: float = 1.0
    kl: float = 0.0
    flex: float = 0.1
    depth: float = 1.0
    normal: float = 1.0
    mask: float = 0.5
    ssim: float = 0.2
    flex_alpha: float = 0.01
    flex_beta: float = 0.01
    flex_delta: float = 0.01

    def __post_init__(self):
        values = [float(getattr(self, f.name)) for f in fields(self)]
        if any(v < 0 or not np.isfinite(v) for v in values):
            raise ValueError("loss weights must be finite and nonnegative")
        if not any(v > 0 for v in values):
            raise ValueError("at least one loss weight must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown loss weight keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self):
        return asdict(self)


def _gaussian_window(size, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_valid(x, k):
    y = sliding_window_view(x, len(k), axis=0) @ k
    return sliding_window_view(y, len(k), axis=1) @ k


def _filter_adjoint(y, k, shape):
    n = len(k)
    tmp = np.zeros((y.shape[0], shape[1]))
    for j in range(n):
        tmp[:, j:j + y.shape[1]] += k[j] * y
    out = np.zeros(shape)
    for j in range(n):
        out[j:j + y.shape[0], :] += k[j] * tmp
    return out


def ssim(a, b, window=11, sigma=1.5, grad=False):
    """Mean structural similarity of two single-channel images.

    Uses a Gaussian window over the valid region only. Images smaller than
    the window shrink it to the largest odd size that fits.

    Returns
    -------
    value : float
    d_a : ndarray, only when ``grad=True``
        Gradient of the value with respect to ``a``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("ssim needs two images of equal 2-D shape")
    size = min(window, *a.shape)
    if size % 2 == 0:
        size -= 1
    k = _gaussian_window(size, sigma)
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    m_aa, m_bb, m_ab = _filter_valid(a * a, k), _filter_valid(b * b, k), _filter_valid(a * b, k)
    var_a, var_b, cov = m_aa - mu_a * mu_a, m_bb - mu_b * mu_b, m_ab - mu_a * mu_b
    n1 = 2 * mu_a * mu_b + SSIM_C1
    n2 = 2 * cov + SSIM_C2
    d1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    d2 = var_a + var_b + SSIM_C2
    smap = (n1 * n2) / (d1 * d2)
    value = float(smap.mean())
    if not grad:
        return value
    if np.array_equal(a, b):
        # maximum of SSIM; skip the roundoff-level analytic gradient
        return value, np.zeros_like(a)

    count = smap.size
    ds_dmu = 2 * mu_b * n2 / (d1 * d2) - smap * 2 * mu_a / d1
    ds_dvar = -smap / d2
    ds_dcov = 2 * n1 / (d1 * d2)
    g_m = (ds_dmu - 2 * mu_a * ds_dvar - mu_b * ds_dcov) / count
    g_mm = ds_dvar / count
    g_mab = ds_dcov / count
    d_a = (_filter_adjoint(g_m, k, a.shape)
           + 2 * a * _filter_adjoint(g_mm, k, a.shape)
           + b * _filter_adjoint(g_mab, k, a.shape))
    return value, d_a


def render_loss(pred, gt, weights=None):
    """Weighted L1 depth / normal / mask loss plus ``1 - SSIM`` on normal maps.

    Depth and normal L1 are averaged over pixels covered in both images; the
    mask term averages over all pixels. Only the depth and normal channels of
    ``pred`` receive gradients.

    Returns
    -------
    loss : float
    d_depth : ndarray (H, W)
    d_normal : ndarray (H, W, 3)
    """
    w = weights or LossWeights()
    if pred.depth.shape != gt.depth.shape:
        raise ValueError(f"resolution mismatch: {pred.depth.shape} vs {gt.depth.shape}")
    pm, gm = pred.mask.astype(bool), gt.mask.astype(bool)
    both = pm & gm
    m = int(both.sum())
    d_depth = np.zeros(pred.depth.shape)
    d_normal = np.zeros(pred.normal.shape)
    loss = 0.0

    if m:
        diff = pred.depth[both] - gt.depth[both]
        loss += w.depth * np.abs(diff).sum() / m
        d_depth[both] = w.depth * np.sign(diff) / m
        ndiff = pred.normal[both] - gt.normal[both]
        loss += w.normal * np.abs(ndiff).sum() / (3 * m)
        d_normal[both] = w.normal * np.sign(ndiff) / (3 * m)

    loss += w.mask * np.abs(pm.astype(np.float64) - gm).mean()

    if w.ssim:
        total = 0.0
        for c in range(3):
            val, g = ssim(pred.normal[..., c], gt.normal[..., c], grad=True)
            total += val
            d_normal[..., c] -= w.ssim * g / 3.0
        loss += w.ssim * (1.0 - total / 3.0)
    d_normal[~pm] = 0.0
    return float(loss), d_depth, d_normal


def prune_loss(pred_probs, gt_occ):
    """Mean binary cross-entropy between predicted occupancy and ground truth."""
    p = np.asarray(pred_probs, dtype=np.float64).ravel()
    y = np.asarray(gt_occ, dtype=bool).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    if p.size == 0:
        return 0.0
    p = np.clip(p, PRUNE_EPS, 1.0 - PRUNE_EPS)
    return float(-np.mean(np.where(y, np.log(p), np.log1p(-p))))


def smoothness(s, ca, cb, spacing):
    """Mean squared finite difference ``(s_a - s_b)^2 / h^2`` over corner pairs, and its gradient."""
    s = np.asarray(s, dtype=np.float64)
    if len(ca) == 0:
        return 0.0, np.zeros_like(s)
    inv_h2 = 1.0 / np.asarray(spacing, dtype=np.float64) ** 2
    diff = s[ca] - s[cb]
    value = float(np.mean(diff * diff * inv_h2))
    g = 2.0 * diff * inv_h2 / len(ca)
    d_s = np.bincount(ca, g, len(s)) - np.bincount(cb, g, len(s))
    return value, d_s


def flex_reg(grid, params, weights=None):
    """Regulariser: SDF smoothness over lattice edges plus shrinkage of alpha, beta and delta.

    Returns the value and a :class:`ParamGradients`.
    """
    w = weights or LossWeights()
    params.check(grid)
    grads = ParamGradients.zeros_like(params)
    ca, cb, axis = grid.unique_edges()
    cell = grid.cell_size
    value, grads.d_s = smoothness(params.s, ca, cb, cell[axis])
    if params.alpha.size:
        value += w.flex_alpha * float(np.mean((params.alpha - 1.0) ** 2))
        grads.d_alpha = w.flex_alpha * 2.0 * (params.alpha - 1.0) / params.alpha.size
        value += w.flex_beta * float(np.mean((params.beta - 1.0) ** 2))
        grads.d_beta = w.flex_beta * 2.0 * (params.beta - 1.0) / params.beta.size
    if params.delta.size:
        scaled = params.delta / cell
        value += w.flex_delta * float(np.mean(np.sum(scaled**2, axis=1)))
        grads.d_delta = w.flex_delta * 2.0 * scaled / cell / len(params.delta)
    return value, grads
