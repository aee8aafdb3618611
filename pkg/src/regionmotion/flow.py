"""Dense flow synthesis from region motions, warping, and reconstruction losses.

Flows are backward maps: ``flow[y, x]`` holds the absolute source-image
coordinate ``(x', y')`` that destination pixel ``(x, y)`` samples from.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import heatmap as hm
from .errors import ChannelMismatch, GridMismatch, GridTooSmall, RegionCountMismatch
from .motion import AffineMotion, MotionSet
from .tensor_io import Grid2, as_image, pixel_coords

DEFAULT_BG_THRESHOLD = 1e-3
DEFAULT_LEVELS = 4

FeatureExtractor = Callable[[np.ndarray], Sequence[np.ndarray]]


def identity_flow(grid: Grid2) -> np.ndarray:
    xs, ys = pixel_coords(Grid2(*grid))
    return np.stack([xs, ys], axis=-1)


def affine_flow(motion: AffineMotion, grid: Grid2) -> np.ndarray:
    """Flow ``A lift(z)`` of a single affine motion over the whole grid."""
    return motion.apply(identity_flow(grid))


def synthesize_flow(motions: MotionSet, assign) -> np.ndarray:
    """Blend per-region affine flows with assignment maps.

    ``assign`` has shape ``(K+1, H, W)``; index 0 weights the background
    motion (identity when the set has none), index ``k`` weights region
    ``k``. The region motions must already map driving to source.
    """
    assign = np.asarray(assign, dtype=np.float64)
    if assign.ndim != 3 or assign.shape[0] != motions.K + 1:
        raise RegionCountMismatch(
            f"assignment has {assign.shape[0] if assign.ndim == 3 else '?'} maps, "
            f"expected K+1 = {motions.K + 1}"
        )
    grid = Grid2(*assign.shape[1:])
    base = identity_flow(grid)
    background = motions.background or AffineMotion.identity()
    flow = np.zeros(base.shape)
    for w, m in zip(assign, (background,) + motions.regions):
        flow += w[..., None] * m.apply(base)
    return flow


def oracle_assignment(heatmaps, bg_threshold: float = DEFAULT_BG_THRESHOLD) -> np.ndarray:
    """Assignment maps derived directly from region heatmaps.

    Pixels whose total heatmap mass is below ``bg_threshold`` go entirely to
    the background; elsewhere region weights are the heatmaps renormalized
    across regions.
    """
    if bg_threshold < 0:
        raise ValueError("bg_threshold must be nonnegative")
    grid = hm.stack_grid(heatmaps)
    stack = np.asarray(heatmaps, dtype=np.float64).reshape(-1, *grid)
    total = stack.sum(axis=0)
    is_bg = total < bg_threshold
    out = np.zeros((stack.shape[0] + 1,) + tuple(grid))
    out[0] = is_bg
    safe = np.where(is_bg, 1.0, total)
    out[1:] = np.where(is_bg, 0.0, stack / safe)
    return out


def warp_image(img, flow) -> np.ndarray:
    """Bilinear backward warp with border clamping.

    ``img`` may be ``(H, W)`` or ``(H, W, C)``; the output matches its
    layout. Sample coordinates are clamped to the image before
    interpolation, so out-of-range samples repeat the border.
    """
    img = np.asarray(img, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    if flow.shape[:2] != img.shape[:2] or flow.shape[2:] != (2,):
        raise GridMismatch(f"flow {flow.shape} does not match image {img.shape}")
    h, w = img.shape[:2]
    x = np.clip(flow[..., 0], 0.0, w - 1)
    y = np.clip(flow[..., 1], 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 1)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    return out[:, :, 0] if squeeze else out


def apply_confidence(img, conf) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    if conf.shape != img.shape[:2]:
        raise GridMismatch(f"confidence {conf.shape} does not match image {img.shape}")
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValueError("confidence values must lie in [0, 1]")
    return img * (conf[..., None] if img.ndim == 3 else conf)


def gaussian_channel(h) -> np.ndarray:
    """Gaussian approximation of a region heatmap from its own mean and covariance."""
    mu, cov = hm.moments(h)
    return hm.rasterize_gaussian(mu, cov, Grid2(*np.shape(h)))


def build_flow_input(source, motions: MotionSet, heatmaps) -> np.ndarray:
    """Assemble the ``(H, W, 4K+3)`` input of a pixel-wise flow predictor.

    Channel layout: for each region ``k`` three channels of the source
    warped by that region's driving-to-source motion followed by one
    Gaussian heatmap channel; the last three channels hold the source warped
    by the background motion.
    """
    source = np.asarray(source, dtype=np.float64)
    if source.ndim != 3 or source.shape[2] != 3:
        raise ChannelMismatch(f"source must be RGB (H, W, 3), got shape {source.shape}")
    if len(heatmaps) != motions.K:
        raise RegionCountMismatch(f"{len(heatmaps)} heatmaps for {motions.K} region motions")
    grid = Grid2(*source.shape[:2])
    if hm.stack_grid(heatmaps) != grid:
        raise GridMismatch("heatmap grid does not match source image")
    blocks = []
    for m, h in zip(motions.regions, heatmaps):
        blocks.append(warp_image(source, affine_flow(m, grid)))
        blocks.append(gaussian_channel(h)[..., None])
    background = motions.background or AffineMotion.identity()
    blocks.append(warp_image(source, affine_flow(background, grid)))
    return np.concatenate(blocks, axis=-1).astype(np.float32)


# ---------------------------------------------------------------------------
# losses


def identity_features(img: np.ndarray) -> list[np.ndarray]:
    return [img]


def avg_pool2(img: np.ndarray) -> np.ndarray:
    """2x2 average pooling; an odd trailing row or column is dropped."""
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise GridTooSmall(f"cannot pool a {h}x{w} grid")
    h2, w2 = h // 2 * 2, w // 2 * 2
    x = img[:h2, :w2]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    if levels < 1:
        raise ValueError("levels must be at least 1")
    out = [img]
    for _ in range(levels - 1):
        out.append(avg_pool2(out[-1]))
    return out


def reconstruction_loss(
    generated,
    target,
    levels: int = DEFAULT_LEVELS,
    features: FeatureExtractor | None = None,
) -> float:
    """Multi-resolution L1 loss between two images in a feature space.

    Level ``l`` compares the images after ``l`` rounds of 2x2 average
    pooling (level 0 is full resolution). Each level contributes the sum
    over feature layers of the mean absolute difference.
    """
    gen = as_image(generated)
    tgt = as_image(target)
    if gen.shape != tgt.shape:
        raise GridMismatch(f"generated {gen.shape} vs target {tgt.shape}")
    features = features or identity_features
    total = 0.0
    for a, b in zip(pyramid(gen, levels), pyramid(tgt, levels)):
        for fa, fb in zip(features(a), features(b)):
            total += float(np.mean(np.abs(np.asarray(fa) - np.asarray(fb))))
    return total
