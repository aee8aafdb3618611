"""Region heatmaps: normalization, first/second moments, Gaussian rasterization.

A heatmap is a nonnegative ``(H, W)`` array. Most operations require it to
be normalized (sum 1). Moments are always accumulated in float64.
"""
from __future__ import annotations

import numpy as np

from .errors import GridMismatch, NotNormalized, SingularCovariance, ZeroMass
from .tensor_io import Grid2, pixel_coords

NORM_TOL = 1e-6
EIG_FLOOR = 1e-8


def normalize(h, logits: bool = False) -> np.ndarray:
    """Scale a heatmap to unit mass.

    With ``logits=True`` the input is treated as raw scores and a softmax
    over all pixels is applied instead.
    """
    h = np.asarray(h, dtype=np.float64)
    if logits:
        h = np.exp(h - h.max())
    elif np.any(h < 0):
        raise ValueError("heatmap weights must be nonnegative")
    total = h.sum()
    if not total > 0:
        raise ZeroMass("heatmap has zero total mass")
    return h / total


def check_normalized(h: np.ndarray) -> None:
    total = float(np.sum(h, dtype=np.float64))
    if abs(total - 1.0) > NORM_TOL:
        raise NotNormalized(f"heatmap sums to {total:.9g}, expected 1")


def mean(h) -> np.ndarray:
    """Soft-argmax location ``sum_z M(z) z`` as ``(x, y)``."""
    h = np.asarray(h, dtype=np.float64)
    check_normalized(h)
    xs, ys = pixel_coords(Grid2(*h.shape))
    return np.array([np.sum(h * xs), np.sum(h * ys)])


def covariance(h, mu=None) -> np.ndarray:
    """Weighted second central moment ``sum_z M(z) (z - mu)(z - mu)^T``."""
    h = np.asarray(h, dtype=np.float64)
    check_normalized(h)
    if mu is None:
        mu = mean(h)
    xs, ys = pixel_coords(Grid2(*h.shape))
    dx = xs - mu[0]
    dy = ys - mu[1]
    cxx = np.sum(h * dx * dx)
    cxy = np.sum(h * dx * dy)
    cyy = np.sum(h * dy * dy)
    return np.array([[cxx, cxy], [cxy, cyy]])


def moments(h) -> tuple[np.ndarray, np.ndarray]:
    mu = mean(h)
    return mu, covariance(h, mu)


def floored_inverse(cov) -> np.ndarray:
    """Inverse of a symmetric 2x2 matrix with eigenvalues clamped to ``EIG_FLOOR``."""
    cov = np.asarray(cov, dtype=np.float64)
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    if not np.all(np.isfinite(vals)):
        raise SingularCovariance("covariance has non-finite entries")
    vals = np.maximum(vals, EIG_FLOOR)
    inv = (vecs / vals) @ vecs.T
    if not np.all(np.isfinite(inv)):
        raise SingularCovariance("covariance not invertible after eigenvalue floor")
    return inv


def rasterize_gaussian(mu, cov, grid: Grid2) -> np.ndarray:
    """Unnormalized Gaussian ``exp(-0.5 (z-mu)^T cov^-1 (z-mu))``, peak 1."""
    prec = floored_inverse(cov)
    xs, ys = pixel_coords(Grid2(*grid))
    dx = xs - mu[0]
    dy = ys - mu[1]
    maha = prec[0, 0] * dx * dx + 2.0 * prec[0, 1] * dx * dy + prec[1, 1] * dy * dy
    return np.exp(-0.5 * maha)


def stack_grid(heatmaps) -> Grid2:
    """Shared grid of a list (or ``K x H x W`` stack) of heatmaps."""
    shapes = {np.shape(h) for h in heatmaps}
    if len(shapes) != 1:
        raise GridMismatch(f"heatmaps have differing grids {sorted(shapes)}")
    (shape,) = shapes
    if len(shape) != 2:
        raise GridMismatch(f"heatmap must be 2-D, got shape {shape}")
    return Grid2(*shape)
