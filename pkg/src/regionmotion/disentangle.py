"""Shape/pose disentanglement over region motions.

Two encoders (pose from driving motions, shape from source motions) and a
decoder, all fully connected with batch normalization, written directly in
numpy with hand-derived backpropagation and an Adam optimizer.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, DivergedLoss, EmptyDataset, MalformedDocument, NonPositiveScale
from .motion import AffineMotion, MotionSet
from .tensor_io import ensure_dir, read_tensor, write_tensor

log = logging.getLogger(__name__)

WIDTHS = (256, 512, 1024)
LATENT = 64
NORM_MOMENTUM = 0.9
BN_EPS = 1e-5
DTYPE = np.float32


def scale_deform(motions: MotionSet, sx: float, sy: float) -> MotionSet:
    """Rescale the image plane by ``diag(sx, sy)`` on every region motion.

    The background motion is left untouched.
    """
    if not (sx > 0 and sy > 0):
        raise NonPositiveScale(f"scales must be positive, got ({sx}, {sy})")
    d = np.diag([sx, sy])
    regions = tuple(AffineMotion(d @ m.linear, d @ m.translation) for m in motions.regions)
    return MotionSet(regions, motions.background)


def _scale_vectors(vectors: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Batched :func:`scale_deform` on ``(N, 6K)`` motion vectors."""
    n = vectors.shape[0]
    v = vectors.reshape(n, -1, 2, 3)
    factors = np.stack([sx, sy], axis=1)[:, None, :, None]
    return (v * factors).reshape(n, -1)


# ---------------------------------------------------------------------------
# model


@dataclass
class MlpModel:
    K: int
    params: dict[str, np.ndarray]
    widths: tuple[int, ...] = WIDTHS
    latent: int = LATENT
    norm_momentum: float = NORM_MOMENTUM
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return 6 * self.K

    def n_parameters(self) -> int:
        return sum(v.size for k, v in self.params.items() if not k.endswith(("running_mean", "running_var")))


def _branch_shapes(prefix: str, sizes: Sequence[int]) -> list[tuple[str, int, int, bool]]:
    """(name, fan_in, fan_out, has_norm) for each linear layer of a branch."""
    out = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        out.append((f"{prefix}.{i}", a, b, i < len(sizes) - 2))
    return out


def _layers(model_k: int, widths, latent) -> dict[str, list]:
    d = 6 * model_k
    enc = [d, *widths, latent]
    dec = [2 * latent, *reversed(widths), d]
    return {
        "pose": _branch_shapes("pose", enc),
        "shape": _branch_shapes("shape", enc),
        "decoder": _branch_shapes("decoder", dec),
    }


def init_model(K: int, seed: int, widths=WIDTHS, latent: int = LATENT, zero_last: bool = False) -> MlpModel:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights and biases."""
    if K < 1:
        raise ValueError("K must be positive")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for layers in _layers(K, widths, latent).values():
        for name, fan_in, fan_out, has_norm in layers:
            bound = 1.0 / math.sqrt(fan_in)
            params[f"{name}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(DTYPE)
            params[f"{name}.bias"] = rng.uniform(-bound, bound, size=fan_out).astype(DTYPE)
            if has_norm:
                params[f"{name}.gamma"] = np.ones(fan_out, DTYPE)
                params[f"{name}.beta"] = np.zeros(fan_out, DTYPE)
                params[f"{name}.running_mean"] = np.zeros(fan_out, DTYPE)
                params[f"{name}.running_var"] = np.ones(fan_out, DTYPE)
    d = 6 * K
    params["io.in_mean"] = np.zeros(d, DTYPE)
    params["io.in_std"] = np.ones(d, DTYPE)
    params["io.out_mean"] = np.zeros(d, DTYPE)
    params["io.out_std"] = np.ones(d, DTYPE)
    if zero_last:
        last = _layers(K, widths, latent)["decoder"][-1][0]
        params[f"{last}.weight"][:] = 0
        params[f"{last}.bias"][:] = 0
        params["io.out_mean"][:] = 0
    return MlpModel(K, params, tuple(widths), latent)


def _branch_forward(p, layers, x, train, momentum, cache):
    for name, _, _, has_norm in layers:
        z = x @ p[f"{name}.weight"] + p[f"{name}.bias"]
        if not has_norm:
            cache.append((name, x, None))
            x = z
            continue
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            n = z.shape[0]
            unbiased = var * (n / max(n - 1, 1))
            rm, rv = p[f"{name}.running_mean"], p[f"{name}.running_var"]
            rm *= momentum
            rm += (1.0 - momentum) * mu
            rv *= momentum
            rv += (1.0 - momentum) * unbiased
        else:
            mu = p[f"{name}.running_mean"]
            var = p[f"{name}.running_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        zhat = (z - mu) * inv_std
        y = zhat * p[f"{name}.gamma"] + p[f"{name}.beta"]
        cache.append((name, x, (zhat, inv_std, y > 0)))
        x = np.maximum(y, 0)
    return x


def _branch_backward(p, layers, cache, grad, grads):
    for (name, _, _, has_norm), (cname, x, norm) in zip(reversed(layers), reversed(cache)):
        assert name == cname
        if has_norm:
            zhat, inv_std, active = norm
            dy = grad * active
            grads[f"{name}.gamma"] = (dy * zhat).sum(axis=0)
            grads[f"{name}.beta"] = dy.sum(axis=0)
            dzhat = dy * p[f"{name}.gamma"]
            n = dzhat.shape[0]
            dz = inv_std / n * (n * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0))
        else:
            dz = grad
        grads[f"{name}.weight"] = x.T @ dz
        grads[f"{name}.bias"] = dz.sum(axis=0)
        grad = dz @ p[f"{name}.weight"].T
    return grad


def _forward_batch(model: MlpModel, pose_in, shape_in, train: bool):
    p = model.params
    layers = _layers(model.K, model.widths, model.latent)
    pose_x = ((pose_in - p["io.in_mean"]) / p["io.in_std"]).astype(DTYPE)
    shape_x = ((shape_in - p["io.in_mean"]) / p["io.in_std"]).astype(DTYPE)
    caches = {"pose": [], "shape": [], "decoder": []}
    zp = _branch_forward(p, layers["pose"], pose_x, train, model.norm_momentum, caches["pose"])
    zs = _branch_forward(p, layers["shape"], shape_x, train, model.norm_momentum, caches["shape"])
    out = _branch_forward(p, layers["decoder"], np.concatenate([zp, zs], axis=1), train, model.norm_momentum, caches["decoder"])
    return out, caches, layers


def forward(model: MlpModel, pose_in, shape_in, mode: str = "infer") -> np.ndarray:
    """Decode motions from a pose input and a shape input.

    Inputs are ``6K`` motion vectors (or ``(N, 6K)`` batches). ``infer``
    normalizes with running statistics; ``train`` uses batch statistics and
    updates the running estimates.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    pose_in = np.asarray(pose_in, dtype=DTYPE)
    shape_in = np.asarray(shape_in, dtype=DTYPE)
    single = pose_in.ndim == 1
    pose_b = np.atleast_2d(pose_in)
    shape_b = np.atleast_2d(shape_in)
    for name, x in (("pose", pose_b), ("shape", shape_b)):
        if x.shape[1] != model.dim:
            raise DimensionMismatch(f"{name} input has {x.shape[1]} values, model expects {model.dim}")
    if pose_b.shape != shape_b.shape:
        raise DimensionMismatch(f"pose batch {pose_b.shape} vs shape batch {shape_b.shape}")
    out, _, _ = _forward_batch(model, pose_b, shape_b, mode == "train")
    out = out * model.params["io.out_std"] + model.params["io.out_mean"]
    return out[0] if single else out


def disentangled_motions(model: MlpModel, source: MotionSet, driving: MotionSet) -> MotionSet:
    """Pose from ``driving``, shape from ``source``; keeps the driving background."""
    if source.K != model.K or driving.K != model.K:
        raise DimensionMismatch(f"model trained for K={model.K}, got K={source.K}/{driving.K}")
    out = forward(model, driving.to_vector(), source.to_vector(), "infer")
    return MotionSet.from_vector(out.astype(np.float64), driving.background)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    total_pairs: int = 100_000
    drop_points: tuple[int, int] | None = None
    seed: int = 0
    scale_range: tuple[float, float] = (0.75, 1.25)
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.drop_points is None:
            self.drop_points = (round(0.66 * self.total_pairs), round(0.88 * self.total_pairs))
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid scale_range {self.scale_range}")
        a, b = self.drop_points
        if not a < b < self.total_pairs:
            raise ValueError(f"drop points {self.drop_points} must increase and stay below {self.total_pairs}")
        if self.batch_size < 2:
            raise ValueError("batch normalization needs batch_size >= 2")


class _Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.b1, self.b2 = cfg.betas
        self.eps = cfg.adam_eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            params[k] -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def _dataset_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if len(dataset) == 0:
        raise EmptyDataset("training needs at least one (source, driving) pair")
    ks = {s.K for s, _ in dataset} | {d.K for _, d in dataset}
    if len(ks) != 1:
        raise DimensionMismatch(f"pairs mix region counts {sorted(ks)}")
    src = np.stack([s.to_vector() for s, _ in dataset])
    drv = np.stack([d.to_vector() for _, d in dataset])
    return src, drv


def learning_rate_at(cfg: TrainConfig, pairs_seen: int) -> float:
    lr = cfg.learning_rate
    for drop in cfg.drop_points:
        if pairs_seen >= drop:
            lr /= 10.0
    return lr


def loss_and_gradients(model: MlpModel, pose_in, shape_in, target) -> tuple[float, dict[str, np.ndarray]]:
    """Mean absolute error against a standardized ``target`` and its parameter gradients.

    Runs the network in training mode, so running statistics are updated.
    """
    p = model.params
    out, caches, layers = _forward_batch(model, pose_in, shape_in, train=True)
    diff = out - target
    grads: dict[str, np.ndarray] = {}
    g = (np.sign(diff) / diff.size).astype(DTYPE)
    g = _branch_backward(p, layers["decoder"], caches["decoder"], g, grads)
    _branch_backward(p, layers["pose"], caches["pose"], g[:, : model.latent], grads)
    _branch_backward(p, layers["shape"], caches["shape"], g[:, model.latent :], grads)
    return float(np.mean(np.abs(diff))), grads


def train(dataset: Sequence[tuple[MotionSet, MotionSet]], cfg: TrainConfig, model: MlpModel | None = None) -> MlpModel:
    """Fit the disentanglement model on (source, driving) pairs.

    Every sampled pair feeds the driving motions, deformed by a random
    per-pair ``diag(sx, sy)``, to the pose encoder and the source motions to
    the shape encoder; the target is the undeformed driving motions. The
    objective is the mean absolute error on standardized motion entries.
    """
    src, drv = _dataset_arrays(dataset)
    K = src.shape[1] // 6
    if model is None:
        model = init_model(K, cfg.seed)
    elif model.K != K:
        raise DimensionMismatch(f"model K={model.K} but data K={K}")
    p = model.params
    both = np.concatenate([src, drv])
    mean = both.mean(axis=0)
    std = np.maximum(both.std(axis=0), 1e-6)
    p["io.in_mean"][:] = mean
    p["io.in_std"][:] = std
    p["io.out_mean"][:] = mean
    p["io.out_std"][:] = std

    rng = np.random.default_rng(cfg.seed + 1)
    trainable = {k: v for k, v in p.items() if not k.startswith("io.") and "running_" not in k}
    opt = _Adam(trainable, cfg)
    lo, hi = cfg.scale_range
    steps = math.ceil(cfg.total_pairs / cfg.batch_size)
    out_std = p["io.out_std"]
    history = []
    seen = 0
    for _ in range(steps):
        n = min(cfg.batch_size, cfg.total_pairs - seen)
        if n < 2:
            break
        idx = rng.integers(0, len(src), size=n)
        sx = rng.uniform(lo, hi, size=n)
        sy = rng.uniform(lo, hi, size=n)
        pose_in = _scale_vectors(drv[idx], sx, sy)
        target = ((drv[idx] - p["io.out_mean"]) / out_std).astype(DTYPE)
        loss, grads = loss_and_gradients(model, pose_in, src[idx], target)
        if not math.isfinite(loss):
            raise DivergedLoss(f"loss became {loss} after {seen} pairs")
        history.append(loss)
        opt.step(trainable, grads, learning_rate_at(cfg, seen))
        seen += n
    epoch_steps = max(1, len(src) // cfg.batch_size)
    last = history[-epoch_steps:]
    log.info("trained on %d pairs; last-epoch loss %.6f", seen, float(np.mean(last)))
    model.history = history
    return model


def epoch_losses(history: Sequence[float], steps_per_epoch: int) -> np.ndarray:
    n = len(history) // steps_per_epoch
    return np.asarray(history[: n * steps_per_epoch]).reshape(n, steps_per_epoch).mean(axis=1)


# ---------------------------------------------------------------------------
# persistence


def save_model(model: MlpModel, out_dir) -> None:
    """Write one MTN1 tensor per parameter plus ``manifest.json``."""
    ensure_dir(out_dir)
    names = sorted(model.params)
    manifest = {
        "K": model.K,
        "widths": list(model.widths),
        "latent": model.latent,
        "norm_momentum": model.norm_momentum,
        "tensors": names,
    }
    for name in names:
        write_tensor(model.params[name], os.path.join(out_dir, f"{name}.mtn"))
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)


def load_model(model_dir) -> MlpModel:
    try:
        with open(os.path.join(model_dir, "manifest.json"), encoding="utf-8") as f:
            manifest = json.load(f)
        K = int(manifest["K"])
        widths = tuple(int(w) for w in manifest["widths"])
        latent = int(manifest["latent"])
        momentum = float(manifest["norm_momentum"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedDocument(f"invalid model manifest: {exc}") from None
    model = init_model(K, 0, widths, latent)
    model.norm_momentum = momentum
    for name in model.params:
        t = read_tensor(os.path.join(model_dir, f"{name}.mtn"))
        if t.shape != model.params[name].shape:
            raise DimensionMismatch(f"tensor {name} has shape {t.shape}, expected {model.params[name].shape}")
        model.params[name] = t.astype(DTYPE)
    return model
