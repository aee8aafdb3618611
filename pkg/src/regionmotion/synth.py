"""Synthetic scenes with known geometry, plus the evaluation metrics run on them.

Three generators live here:

* rotated rectangles rendered with exact area coverage, for the angle
  measurement experiment;
* articulated "puppet" scenes whose parts move by known affine motions over
  a moving textured background, with binary part masks as oracle heatmaps;
* a motion family (motions only, no pixels) used to train the shape/pose
  disentanglement model.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import shapely
from scipy.ndimage import binary_dilation, binary_erosion

from . import flow as fl
from . import heatmap as hm
from .disentangle import disentangled_motions
from .errors import (
    DegenerateSample,
    GridMismatch,
    ModelMissing,
    NumericalError,
    OutOfBounds,
    PartsCollide,
    SizeTooSmall,
)
from .motion import AffineMotion, MotionSet, angle_of, compose, pca_motion, read_motions, relative_update
from .tensor_io import (
    Grid2,
    ensure_dir,
    pixel_coords,
    read_image,
    read_tensor,
    write_image,
    write_tensor,
)


def rotation(theta_deg: float) -> np.ndarray:
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def parallel_map(fn, items, threads: int = 1) -> list:
    """``list(map(fn, items))``, optionally on a thread pool; order is preserved."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# rotated rectangles


@dataclass
class RectSample:
    image: np.ndarray
    angle_deg: float
    width: float
    height: float
    center: tuple[float, float]


def rect_corners(center, width, height, angle_deg) -> np.ndarray:
    half = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * np.array([width, height]) / 2.0
    return half @ rotation(angle_deg).T + np.asarray(center, dtype=np.float64)


def rect_coverage(center, width, height, angle_deg, grid: Grid2) -> np.ndarray:
    """Fraction of each pixel's unit square covered by a rotated rectangle."""
    grid = Grid2(*grid)
    xs, ys = pixel_coords(grid)
    rot = rotation(angle_deg)
    # pixel centers in the rectangle's own frame
    px = xs - center[0]
    py = ys - center[1]
    u = rot[0, 0] * px + rot[1, 0] * py
    v = rot[0, 1] * px + rot[1, 1] * py
    slack = math.sqrt(0.5)
    du = np.abs(u) - width / 2.0
    dv = np.abs(v) - height / 2.0
    cov = np.zeros(tuple(grid))
    cov[(du <= -slack) & (dv <= -slack)] = 1.0
    edge = (du < slack) & (dv < slack) & ~((du <= -slack) & (dv <= -slack))
    if np.any(edge):
        iy, ix = np.nonzero(edge)
        boxes = shapely.box(ix - 0.5, iy - 0.5, ix + 0.5, iy + 0.5)
        poly = shapely.Polygon(rect_corners(center, width, height, angle_deg))
        cov[iy, ix] = shapely.area(shapely.intersection(boxes, poly))
    return cov


def gen_rectangles(
    n: int,
    size: int,
    seed: int,
    side_range: tuple[float, float] = (0.15, 0.6),
    min_aspect: float = 1.5,
) -> list[RectSample]:
    """Random rotated rectangles, each fully inside a ``size x size`` grid.

    Angles are uniform on [0, 90), both sides uniform on
    ``side_range * size`` with the longer side at least ``min_aspect`` times
    the shorter.
    """
    if size < 16:
        raise SizeTooSmall(f"size must be at least 16, got {size}")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = side_range[0] * size, side_range[1] * size
    margin = 1.0
    samples = []
    while len(samples) < n:
        angle = float(rng.uniform(0.0, 90.0))
        w, h = (float(v) for v in rng.uniform(lo, hi, size=2))
        if max(w, h) < min_aspect * min(w, h):
            continue
        c, s = abs(math.cos(math.radians(angle))), abs(math.sin(math.radians(angle)))
        ex = 0.5 * (w * c + h * s)
        ey = 0.5 * (w * s + h * c)
        # pixel area spans [-0.5, size - 0.5]
        x_lo, x_hi = ex - 0.5 + margin, size - 0.5 - ex - margin
        y_lo, y_hi = ey - 0.5 + margin, size - 0.5 - ey - margin
        if x_lo > x_hi or y_lo > y_hi:
            continue
        center = (float(rng.uniform(x_lo, x_hi)), float(rng.uniform(y_lo, y_hi)))
        img = rect_coverage(center, w, h, angle, Grid2(size, size))
        samples.append(RectSample(img, angle, w, h, center))
    return samples


def angle_error(a: float, b: float, period: float = 90.0) -> float:
    d = abs(a - b) % period
    return min(d, period - d)


def toy_angle_eval(samples: Sequence[RectSample], threads: int = 1, bins: int = 10) -> dict:
    """Measure each rectangle's angle from its mask by PCA and report errors."""
    if not samples:
        raise ValueError("no samples to evaluate")

    def one(sample):
        try:
            return angle_of(pca_motion(hm.normalize(sample.image)))
        except NumericalError:
            return None

    measured = parallel_map(one, samples, threads)
    per_item = []
    excluded = 0
    for sample, theta in zip(samples, measured):
        if theta is None:
            excluded += 1
            per_item.append(None)
            continue
        per_item.append(angle_error(theta, sample.angle_deg))
    valid = [e for e in per_item if e is not None]
    if not valid:
        raise DegenerateSample("every sample was degenerate")
    counts, edges = np.histogram(valid, bins=bins, range=(0.0, max(max(valid), 1e-12)))
    return {
        "mean": float(np.mean(valid)),
        "max": float(np.max(valid)),
        "per_item": per_item,
        "excluded": excluded,
        "histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
    }


# ---------------------------------------------------------------------------
# puppet scenes


@dataclass
class PartShape:
    kind: str  # "ellipse" or "rectangle"
    width: float  # full extent along the part's own x axis
    height: float

    def contains(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        a, b = self.width / 2.0, self.height / 2.0
        if self.kind == "ellipse":
            return (u / a) ** 2 + (v / b) ** 2 <= 1.0
        if self.kind == "rectangle":
            return (np.abs(u) <= a) & (np.abs(v) <= b)
        raise ValueError(f"unknown part kind {self.kind!r}")

    def radius(self) -> float:
        return 0.5 * math.hypot(self.width, self.height)


@dataclass
class PuppetConfig:
    parts: int = 3
    frames: int = 16
    size: int = 128
    body_scale: float = 1.0
    max_rotation_deg: float = 35.0
    max_shift: float = 0.06  # fraction of a layout cell
    max_stretch: float = 0.08
    background_shift: float = 2.0  # pixels
    background_rotation_deg: float = 1.0
    static: bool = False
    shapes: Optional[list[PartShape]] = None
    centers: Optional[list[tuple[float, float]]] = None


@dataclass
class PuppetScene:
    grid: Grid2
    shapes: list[PartShape]
    part_motions: list[list[AffineMotion]]  # [t][k], part frame -> image
    background_motions: list[AffineMotion]  # [t], texture frame -> image
    frames: np.ndarray  # (T, H, W, 3)
    masks: np.ndarray  # (T, K, H, W) bool
    config: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.shapes)

    @property
    def T(self) -> int:
        return len(self.part_motions)

    def heatmaps(self, t: int) -> np.ndarray:
        """Oracle heatmaps of frame ``t``: normalized part masks, ``(K, H, W)``."""
        return np.stack([hm.normalize(m.astype(np.float64)) for m in self.masks[t]])

    def labels(self, t: int) -> np.ndarray:
        out = np.zeros(tuple(self.grid), dtype=np.int64)
        for k, m in enumerate(self.masks[t]):
            out[m] = k + 1
        return out

    def motion_set(self, t: int) -> MotionSet:
        return MotionSet(tuple(self.part_motions[t]), self.background_motions[t])


class _Texture:
    """Smooth seeded color field evaluated at continuous coordinates."""

    def __init__(self, rng: np.random.Generator, base, amplitude: float, wavelength: float, terms: int):
        self.base = np.asarray(base, dtype=np.float64)
        self.slope = rng.uniform(-1.0, 1.0, size=(2, 3)) * amplitude / 2.0
        self.freqs = rng.normal(size=(terms, 2)) * (2.0 * math.pi / wavelength)
        self.phases = rng.uniform(0.0, 2.0 * math.pi, size=terms)
        self.weights = rng.uniform(-1.0, 1.0, size=(terms, 3)) * amplitude / terms
        self.wavelength = wavelength

    def __call__(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(self.base, u.shape + (3,)).copy()
        out += (u / (4.0 * self.wavelength))[..., None] * self.slope[0]
        out += (v / (4.0 * self.wavelength))[..., None] * self.slope[1]
        for f, p, w in zip(self.freqs, self.phases, self.weights):
            out += np.sin(f[0] * u + f[1] * v + p)[..., None] * w
        return np.clip(out, 0.0, 1.0)


def _layout(k: int, size: int) -> tuple[list[tuple[float, float]], float]:
    cols = max(2, math.ceil(math.sqrt(k)))
    cell = size / cols
    centers = [((i % cols + 0.5) * cell - 0.5, (i // cols + 0.5) * cell - 0.5) for i in range(k)]
    return centers, cell


def _render_frame(shapes, motions, bg_motion, textures, bg_texture, grid):
    xs, ys = pixel_coords(grid)
    inv_bg = np.linalg.inv(bg_motion.homogeneous())
    qu = inv_bg[0, 0] * xs + inv_bg[0, 1] * ys + inv_bg[0, 2]
    qv = inv_bg[1, 0] * xs + inv_bg[1, 1] * ys + inv_bg[1, 2]
    frame = bg_texture(qu, qv)
    masks = []
    for shape, m, tex in zip(shapes, motions, textures):
        inv = np.linalg.inv(m.homogeneous())
        u = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
        v = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
        mask = shape.contains(u, v)
        frame[mask] = tex(u[mask], v[mask])
        masks.append(mask)
    return frame, np.stack(masks)


def _check_inside(shape: PartShape, m: AffineMotion, grid: Grid2, k: int, t: int) -> None:
    a, b = shape.width / 2.0, shape.height / 2.0
    if shape.kind == "rectangle":
        pts = np.array([[-a, -b], [a, -b], [a, b], [-a, b]])
    else:
        s = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
        pts = np.stack([a * np.cos(s), b * np.sin(s)], axis=1)
    img_pts = m.apply(pts)
    if img_pts.min() < 0.0 or img_pts[:, 0].max() > grid.width - 1 or img_pts[:, 1].max() > grid.height - 1:
        raise OutOfBounds(f"part {k} leaves the grid at frame {t}")


def gen_puppet(cfg: PuppetConfig, seed: int) -> PuppetScene:
    """Render an articulated scene with known per-part affine motions.

    Each part is a rectangle or ellipse elongated along its own x axis. At
    frame ``t`` it is placed by ``[s R(theta) diag(ex, ey), c]`` with the body
    scale ``s`` and smoothly varying angle, stretch and center. The
    background texture moves by a small rigid motion about the grid center.
    """
    if cfg.frames < 2:
        raise ValueError("a scene needs at least 2 frames")
    rng = np.random.default_rng(seed)
    grid = Grid2(cfg.size, cfg.size)
    centers, cell = _layout(cfg.parts, cfg.size)
    if cfg.centers is not None:
        centers = list(cfg.centers)
    if cfg.shapes is not None:
        shapes = list(cfg.shapes)
    else:
        shapes = []
        for _ in range(cfg.parts):
            kind = "rectangle" if rng.random() < 0.5 else "ellipse"
            w = rng.uniform(0.6, 0.72) * cell
            h = rng.uniform(0.2, 0.26) * cell
            shapes.append(PartShape(kind, float(w), float(h)))
    if len(shapes) != cfg.parts or len(centers) != cfg.parts:
        raise ValueError("shapes/centers must list one entry per part")

    base_angle = rng.uniform(-40.0, 40.0, size=cfg.parts)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(cfg.parts, 5))
    freqs = rng.uniform(0.5, 1.5, size=(cfg.parts, 5))
    textures = [
        _Texture(rng, rng.uniform(0.25, 0.75, size=3), 0.25, wavelength=0.5 * s.width, terms=3) for s in shapes
    ]
    bg_texture = _Texture(rng, [0.5, 0.5, 0.5], 0.35, wavelength=cfg.size / 3.0, terms=6)
    bg_phase = rng.uniform(0.0, 2.0 * math.pi, size=3)

    amp = 0.0 if cfg.static else 1.0
    part_motions = []
    bg_motions = []
    pivot = np.array([(cfg.size - 1) / 2.0] * 2)
    for t in range(cfg.frames):
        tau = 2.0 * math.pi * t / cfg.frames
        frame_motions = []
        for k in range(cfg.parts):
            ph, fr = phases[k], freqs[k]
            theta = base_angle[k] + amp * cfg.max_rotation_deg * math.sin(fr[0] * tau + ph[0])
            ex = 1.0 + amp * cfg.max_stretch * math.sin(fr[1] * tau + ph[1])
            ey = 1.0 + amp * cfg.max_stretch * math.sin(fr[2] * tau + ph[2])
            shift = amp * cfg.max_shift * cell * np.array(
                [math.sin(fr[3] * tau + ph[3]), math.sin(fr[4] * tau + ph[4])]
            )
            lin = cfg.body_scale * rotation(theta) @ np.diag([ex, ey])
            frame_motions.append(AffineMotion(lin, np.asarray(centers[k]) + shift))
        part_motions.append(frame_motions)
        beta = amp * cfg.background_rotation_deg * math.sin(tau + bg_phase[0])
        delta = amp * cfg.background_shift * np.array([math.sin(tau + bg_phase[1]), math.sin(tau + bg_phase[2])])
        rot = rotation(beta)
        bg_motions.append(AffineMotion(rot, pivot - rot @ pivot + delta))

    frames = []
    masks = []
    for t in range(cfg.frames):
        for k, (shape, m) in enumerate(zip(shapes, part_motions[t])):
            _check_inside(shape, m, grid, k, t)
        frame, mask = _render_frame(shapes, part_motions[t], bg_motions[t], textures, bg_texture, grid)
        if np.any(mask.sum(axis=0) > 1):
            raise PartsCollide(f"parts overlap at frame {t}")
        if np.any(mask.reshape(cfg.parts, -1).sum(axis=1) == 0):
            raise OutOfBounds(f"a part covers no pixels at frame {t}")
        frames.append(frame)
        masks.append(mask)

    config = {
        "parts": cfg.parts,
        "frames": cfg.frames,
        "size": cfg.size,
        "body_scale": cfg.body_scale,
        "static": cfg.static,
        "seed": seed,
    }
    return PuppetScene(grid, shapes, part_motions, bg_motions, np.stack(frames), np.stack(masks), config)


def save_scene(scene: PuppetScene, out_dir) -> None:
    """Write ``frames/``, ``heatmaps/``, ``motions/`` and ``scene.json``."""
    for sub in ("frames", "heatmaps", "motions"):
        ensure_dir(os.path.join(out_dir, sub))
    for t in range(scene.T):
        write_image(scene.frames[t], os.path.join(out_dir, "frames", f"{t:04d}.ppm"))
        write_tensor(scene.heatmaps(t), os.path.join(out_dir, "heatmaps", f"{t:04d}.mtn"))
        with open(os.path.join(out_dir, "motions", f"{t:04d}.json"), "w", encoding="utf-8") as f:
            json.dump(scene.motion_set(t).to_json(), f, indent=2)
    manifest = dict(scene.config)
    manifest.update(
        {
            "K": scene.K,
            "T": scene.T,
            "height": scene.grid.height,
            "width": scene.grid.width,
            "shapes": [{"kind": s.kind, "width": s.width, "height": s.height} for s in scene.shapes],
        }
    )
    with open(os.path.join(out_dir, "scene.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)


@dataclass
class LoadedScene:
    """A scene read back from disk: frames, oracle heatmaps, ground-truth motions."""

    frames: np.ndarray  # (T, H, W, 3)
    heatmap_stack: np.ndarray  # (T, K, H, W)
    motion_sets: list[MotionSet]
    manifest: dict

    @property
    def K(self) -> int:
        return self.heatmap_stack.shape[1]

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def heatmaps(self, t: int) -> np.ndarray:
        return self.heatmap_stack[t].astype(np.float64)

    def background(self, t: int) -> AffineMotion:
        return self.motion_sets[t].background or AffineMotion.identity()


def load_scene(scene_dir) -> LoadedScene:
    with open(os.path.join(scene_dir, "scene.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    frames, heats, motions = [], [], []
    for t in range(int(manifest["T"])):
        frames.append(read_image(os.path.join(scene_dir, "frames", f"{t:04d}.ppm")))
        heats.append(read_tensor(os.path.join(scene_dir, "heatmaps", f"{t:04d}.mtn")))
        motions.append(read_motions(os.path.join(scene_dir, "motions", f"{t:04d}.json")))
    return LoadedScene(np.stack(frames), np.stack(heats), motions, manifest)


def as_loaded(scene) -> LoadedScene:
    if isinstance(scene, LoadedScene):
        return scene
    return LoadedScene(
        scene.frames,
        np.stack([scene.heatmaps(t) for t in range(scene.T)]),
        [scene.motion_set(t) for t in range(scene.T)],
        dict(scene.config),
    )


def measure_frame(heatmaps) -> MotionSet:
    """PCA motions of every heatmap in a ``(K, H, W)`` stack."""
    return MotionSet(tuple(pca_motion(hm.normalize(h)) for h in heatmaps))


def boundary_band(masks: np.ndarray, width: int = 2) -> np.ndarray:
    """Pixels within ``width`` (chessboard distance) of any part boundary."""
    band = np.zeros(masks.shape[1:], dtype=bool)
    struct = np.ones((3, 3), dtype=bool)
    for m in masks:
        grown = binary_dilation(m, struct, iterations=width)
        shrunk = binary_erosion(m, struct, iterations=width)
        band |= grown & ~shrunk
    return band


def animate_frame(scene: LoadedScene, t: int, mode: str, model=None, bg_threshold: float = fl.DEFAULT_BG_THRESHOLD):
    """Reconstruct frame ``t`` from frame 0 and return ``(image, S<-D motion set)``.

    ``mode`` selects how the per-region driving motions are formed:
    ``standard`` uses frame ``t`` directly, ``relative`` applies the change
    since the first driving frame (frame 0 here) to the source, and
    ``disentangled`` decodes pose from frame ``t`` and shape from the source.
    """
    src = measure_frame(scene.heatmaps(0))
    drv = measure_frame(scene.heatmaps(t))
    if mode == "standard":
        targets = drv.regions
    elif mode == "relative":
        first = measure_frame(scene.heatmaps(0))
        targets = tuple(relative_update(s, f, d) for s, f, d in zip(src.regions, first.regions, drv.regions))
    elif mode == "disentangled":
        if model is None:
            raise ModelMissing("disentangled mode requires a trained model")
        targets = disentangled_motions(model, src, drv).regions
    else:
        raise ValueError(f"unknown mode {mode!r}")
    background = compose(scene.background(0), scene.background(t))
    s_from_d = MotionSet(tuple(compose(s, d) for s, d in zip(src.regions, targets)), background)
    assign = fl.oracle_assignment(scene.heatmaps(t), bg_threshold)
    flow = fl.synthesize_flow(s_from_d, assign)
    return fl.warp_image(scene.frames[0], flow), s_from_d


def scene_reconstruction_error(
    scene,
    mode: str = "standard",
    model=None,
    bg_threshold: float = fl.DEFAULT_BG_THRESHOLD,
    threads: int = 1,
    return_frames: bool = False,
):
    """Animate frame 0 of a scene to every later frame and report the L1 error.

    The report holds per-frame mean absolute pixel error over the whole frame
    (``per_item``) and with a 2-pixel band around part boundaries excluded
    (``per_item_interior``).
    """
    if mode == "disentangled" and model is None:
        raise ModelMissing("disentangled mode requires a trained model")
    band = None
    if isinstance(scene, PuppetScene):
        band = [boundary_band(scene.masks[t]) | boundary_band(scene.masks[0]) for t in range(scene.T)]
    scene = as_loaded(scene)
    if band is None:
        band = [
            boundary_band(scene.heatmap_stack[t] > 0) | boundary_band(scene.heatmap_stack[0] > 0)
            for t in range(scene.T)
        ]

    def one(t):
        img, _ = animate_frame(scene, t, mode, model, bg_threshold)
        return img

    outputs = parallel_map(one, range(1, scene.T), threads)
    per_item, interior = [], []
    for t, img in zip(range(1, scene.T), outputs):
        diff = np.abs(img - scene.frames[t])
        per_item.append(float(diff.mean()))
        interior.append(float(diff[~band[t]].mean()))
    report = {
        "mode": mode,
        "mean": float(np.mean(per_item)),
        "max": float(np.max(per_item)),
        "per_item": per_item,
        "mean_interior": float(np.mean(interior)),
        "per_item_interior": interior,
    }
    if return_frames:
        return report, outputs
    return report


# ---------------------------------------------------------------------------
# segmentation


def segment(heatmaps, threshold: float = fl.DEFAULT_BG_THRESHOLD) -> np.ndarray:
    """Label each pixel with ``1 + argmax_k M^k`` or 0 when total mass < threshold.

    Ties go to the lowest region index.
    """
    grid = hm.stack_grid(heatmaps)
    stack = np.asarray(heatmaps, dtype=np.float64).reshape(-1, *grid)
    labels = np.argmax(stack, axis=0) + 1
    labels[stack.sum(axis=0) < threshold] = 0
    return labels.astype(np.int64)


def foreground_iou(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise GridMismatch(f"label grids differ: {a.shape} vs {b.shape}")
    fa, fb = a != 0, b != 0
    union = np.count_nonzero(fa | fb)
    if union == 0:
        return 1.0
    return np.count_nonzero(fa & fb) / union


# ---------------------------------------------------------------------------
# motion family for disentanglement


@dataclass
class MotionFamily:
    """Articulated body described by motions only.

    Region ``k`` at body scale ``s`` and pose angle ``theta_k`` has motion
    ``[s R(theta_k) diag(axes_k), center + s * offsets_k + drift]``; its
    singular values are ``s * axes_k`` regardless of pose. Coordinates are
    body-centred, so an isotropic ``scale_deform`` acts exactly like a change
    of body scale.
    """

    axes: np.ndarray  # (K, 2), major >= minor
    offsets: np.ndarray  # (K, 2)
    center: tuple[float, float] = (0.0, 0.0)
    angle_range: tuple[float, float] = (-50.0, 50.0)
    scale_range: tuple[float, float] = (0.8, 1.4)
    drift: float = 6.0
    jitter: float = 3.0

    @property
    def K(self) -> int:
        return len(self.axes)

    @classmethod
    def default(cls, k: int = 3, seed: int = 0) -> "MotionFamily":
        rng = np.random.default_rng(seed)
        major = rng.uniform(6.0, 10.0, size=k)
        minor = major / rng.uniform(2.0, 3.0, size=k)
        ring = 2.0 * math.pi * np.arange(k) / k + rng.uniform(0, 0.3)
        offsets = 24.0 * np.stack([np.cos(ring), np.sin(ring)], axis=1)
        return cls(np.stack([major, minor], axis=1), offsets)

    def sample_pose(self, rng: np.random.Generator) -> dict:
        return {
            "angles": rng.uniform(*self.angle_range, size=self.K),
            "drift": rng.uniform(-self.drift, self.drift, size=2),
            "jitter": rng.uniform(-self.jitter, self.jitter, size=(self.K, 2)),
        }

    def motions(self, scale: float, pose: dict) -> MotionSet:
        regions = []
        for k in range(self.K):
            lin = scale * rotation(pose["angles"][k]) @ np.diag(self.axes[k])
            t = np.asarray(self.center) + scale * self.offsets[k] + pose["drift"] + pose["jitter"][k]
            regions.append(AffineMotion(lin, t))
        return MotionSet(tuple(regions))

    def sample_pairs(self, n: int, seed: int) -> list[tuple[MotionSet, MotionSet]]:
        """Source/driving pairs sharing a body scale, with independent poses."""
        rng = np.random.default_rng(seed)
        pairs = []
        for _ in range(n):
            s = float(rng.uniform(*self.scale_range))
            pairs.append((self.motions(s, self.sample_pose(rng)), self.motions(s, self.sample_pose(rng))))
        return pairs

    def scale_swap_pairs(self, n: int, seed: int, source_scale: float = 1.3, driving_scale: float = 1.0) -> list[dict]:
        """Held-out pairs whose source and driving bodies differ in scale."""
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            sp, dp = self.sample_pose(rng), self.sample_pose(rng)
            out.append(
                {
                    "source": self.motions(source_scale, sp),
                    "driving": self.motions(driving_scale, dp),
                    "source_singular": source_scale * self.axes,
                    "driving_angles": dp["angles"],
                }
            )
        return out
