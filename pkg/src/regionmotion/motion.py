"""Region motions measured from heatmaps, and the affine algebra around them.

An :class:`AffineMotion` maps reference-frame coordinates into image
coordinates, ``z = linear @ r + translation``. Two motions measured for the
same region in a source and a driving frame are chained through the shared
reference frame to give the driving-to-source motion (:func:`compose`).
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import heatmap as hm
from .errors import (
    DegenerateAngle,
    DegenerateConfiguration,
    DegenerateHeatmap,
    GridMismatch,
    IsotropicCovariance,
    MalformedDocument,
    NotPcaStructured,
    SingularDriving,
)
from .tensor_io import Grid2, pixel_coords

DEGENERATE_EIG = 1e-8
ISOTROPIC_GAP = 1e-8
SINGULAR_DET = 1e-12


@dataclass(frozen=True, eq=False)
class AffineMotion:
    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        lin = np.array(self.linear, dtype=np.float64).reshape(2, 2)
        t = np.array(self.translation, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(t))):
            raise ValueError("affine motion entries must be finite")
        lin.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "AffineMotion":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def from_matrix(cls, m) -> "AffineMotion":
        """Build from a 2x3 matrix (or the top two rows of a 3x3 one)."""
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:2, :2], m[:2, 2])

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "AffineMotion":
        """Row-major ``[l00, l01, tx, l10, l11, ty]``."""
        if len(values) != 6:
            raise ValueError(f"affine needs 6 values, got {len(values)}")
        return cls.from_matrix(np.reshape(np.asarray(values, dtype=np.float64), (2, 3)))

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.linear, self.translation])

    def homogeneous(self) -> np.ndarray:
        out = np.eye(3)
        out[:2, :2] = self.linear
        out[:2, 2] = self.translation
        return out

    def to_list(self) -> list[float]:
        return [float(v) for v in self.matrix().ravel()]

    def apply(self, points) -> np.ndarray:
        """Map ``(..., 2)`` points through the motion."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, AffineMotion):
            return NotImplemented
        return bool(
            np.array_equal(self.linear, other.linear)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash(tuple(self.to_list()))

    def __repr__(self):
        vals = ", ".join(f"{v:.6g}" for v in self.to_list())
        return f"AffineMotion([{vals}])"


@dataclass(frozen=True)
class MotionSet:
    regions: tuple[AffineMotion, ...]
    background: Optional[AffineMotion] = None

    def __post_init__(self):
        regions = tuple(self.regions)
        if len(regions) < 1:
            raise ValueError("a motion set needs at least one region")
        object.__setattr__(self, "regions", regions)

    @property
    def K(self) -> int:
        return len(self.regions)

    def to_vector(self) -> np.ndarray:
        """Flat ``6K`` vector, each region row-major, regions in order."""
        return np.concatenate([np.asarray(r.to_list()) for r in self.regions])

    @classmethod
    def from_vector(cls, values, background: Optional[AffineMotion] = None) -> "MotionSet":
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size % 6 or values.size == 0:
            raise ValueError(f"motion vector length {values.size} is not a positive multiple of 6")
        regions = tuple(AffineMotion.from_list(values[i : i + 6]) for i in range(0, values.size, 6))
        return cls(regions, background)

    def to_json(self) -> dict:
        return {
            "K": self.K,
            "regions": [{"affine": r.to_list()} for r in self.regions],
            "background": None if self.background is None else self.background.to_list(),
        }

    @classmethod
    def from_json(cls, doc) -> "MotionSet":
        try:
            k = int(doc["K"])
            regions = tuple(AffineMotion.from_list(r["affine"]) for r in doc["regions"])
            bg = doc.get("background")
            background = None if bg is None else AffineMotion.from_list(bg)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"invalid motion document: {exc}") from None
        if k != len(regions) or k < 1:
            raise MalformedDocument(f"K={k} but {len(regions)} regions listed")
        return cls(regions, background)


def write_motions(mset: MotionSet, path) -> None:
    text = json.dumps(mset.to_json(), indent=2) + "\n"
    if str(path) == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def read_motions(path) -> MotionSet:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: {exc}") from None
    return MotionSet.from_json(doc)


# ---------------------------------------------------------------------------
# measurement


def sym_eig2(cov) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigendecomposition of a symmetric 2x2 matrix.

    Eigenvalues are returned in descending order. The first eigenvector has a
    nonnegative x component (nonnegative y when x vanishes) and the second
    completes a right-handed frame, so ``det(U) = +1``.
    """
    a = float(cov[0, 0])
    b = 0.5 * (float(cov[0, 1]) + float(cov[1, 0]))
    c = float(cov[1, 1])
    mid = 0.5 * (a + c)
    rad = math.hypot(0.5 * (a - c), b)
    vals = np.array([mid + rad, mid - rad])
    # phi in (-pi/2, pi/2] so cos(phi) >= 0
    phi = 0.5 * math.atan2(2.0 * b, a - c)
    if phi <= -0.5 * math.pi:
        phi += math.pi
    cos_p, sin_p = math.cos(phi), math.sin(phi)
    if abs(cos_p) < 1e-12:
        cos_p, sin_p = 0.0, 1.0
    u = np.array([[cos_p, -sin_p], [sin_p, cos_p]])
    return vals, u


def _pca_from_moments(mu, cov) -> AffineMotion:
    vals, u = sym_eig2(cov)
    if vals[0] < DEGENERATE_EIG:
        raise DegenerateHeatmap(f"largest covariance eigenvalue {vals[0]:.3g} below {DEGENERATE_EIG}")
    if vals[0] - vals[1] < ISOTROPIC_GAP:
        s = math.sqrt(max(0.5 * (vals[0] + vals[1]), 0.0))
        return AffineMotion(s * np.eye(2), mu)
    root = np.sqrt(np.maximum(vals, 0.0))
    return AffineMotion(u * root, mu)


def pca_motion(h) -> AffineMotion:
    """Measure a region motion from a normalized heatmap by PCA.

    The translation is the heatmap mean and the linear part is
    ``U diag(sqrt(s))`` where ``U diag(s) U^T`` is the heatmap covariance.
    The result has orthogonal columns (rotation times axis scaling, no
    shear). For an isotropic covariance the linear part is ``sqrt(s) I``.
    """
    mu, cov = hm.moments(h)
    return _pca_from_moments(mu, cov)


def principal_axes(m: AffineMotion) -> tuple[np.ndarray, float]:
    """Singular values (descending) and major-axis angle in degrees of any motion.

    Works for motions with shear too: the axes are those of ``L L^T``. The
    angle is reduced to [0, 90).
    """
    vals, u = sym_eig2(m.linear @ m.linear.T)
    sv = np.sqrt(np.maximum(vals, 0.0))
    theta = math.degrees(math.atan2(u[1, 0], u[0, 0])) % 90.0
    return sv, theta


def angle_of(m: AffineMotion, rel_tol: float = 1e-6) -> float:
    """Orientation of the first principal axis, in degrees within [0, 90).

    Computed as ``atan2(U10, U00)`` from the first column of the linear part.
    Raises :class:`NotPcaStructured` when the columns are not orthogonal and
    :class:`DegenerateAngle` when both axes have the same length.
    """
    lin = m.linear
    c0, c1 = lin[:, 0], lin[:, 1]
    scale = float(np.sum(lin * lin))
    if abs(float(c0 @ c1)) > rel_tol * max(scale, 1e-300):
        raise NotPcaStructured("linear part has non-orthogonal columns")
    if abs(float(c0 @ c0) - float(c1 @ c1)) < ISOTROPIC_GAP:
        raise DegenerateAngle("isotropic motion has no principal direction")
    theta = math.degrees(math.atan2(c0[1], c0[0]))
    theta %= 90.0
    if theta >= 90.0:  # -tiny % 90 rounds to 90.0
        theta = 0.0
    return theta


def regression_motion(h, params) -> AffineMotion:
    """Pool per-pixel affine parameters under a heatmap.

    ``params`` holds four ``(H, W)`` channels in the order
    ``P00, P01, P10, P11`` (shape ``(4, H, W)`` or ``(2, 2, H, W)``).
    """
    h = np.asarray(h, dtype=np.float64)
    p = np.asarray(params, dtype=np.float64)
    if p.ndim == 4:
        p = p.reshape(4, *p.shape[2:])
    if p.ndim != 3 or p.shape[0] != 4 or p.shape[1:] != h.shape:
        raise GridMismatch(f"parameter maps {p.shape} do not match heatmap {h.shape}")
    mu = hm.mean(h)
    lin = np.einsum("hw,chw->c", h, p).reshape(2, 2)
    return AffineMotion(lin, mu)


# ---------------------------------------------------------------------------
# composition


def _inverse_lift(m: AffineMotion) -> np.ndarray:
    det = float(np.linalg.det(m.linear))
    if not abs(det) > SINGULAR_DET:
        raise SingularDriving(f"motion not invertible (det={det:.3g})")
    (a, b), (c, d) = m.linear
    inv_lin = np.array([[d, -b], [-c, a]]) / det
    out = np.eye(3)
    out[:2, :2] = inv_lin
    out[:2, 2] = -inv_lin @ m.translation
    return out


def invert(m: AffineMotion) -> AffineMotion:
    return AffineMotion.from_matrix(_inverse_lift(m))


def compose(source: AffineMotion, driving: AffineMotion) -> AffineMotion:
    """Driving-to-source motion ``A_src @ lift(A_drv)^-1`` through the reference frame."""
    return AffineMotion.from_matrix(source.homogeneous() @ _inverse_lift(driving))


def chain(*motions: AffineMotion) -> AffineMotion:
    """Homogeneous product of motions, left to right."""
    out = np.eye(3)
    for m in motions:
        out = out @ m.homogeneous()
    return AffineMotion.from_matrix(out)


def relative_update(src: AffineMotion, drv_first: AffineMotion, drv_t: AffineMotion) -> AffineMotion:
    """Apply the driving delta ``drv_t @ drv_first^-1`` to a source motion.

    Returns ``drv_t @ lift(drv_first)^-1 @ lift(src)``. The two degenerate
    cases are returned exactly: ``src`` when ``drv_t == drv_first`` and
    ``drv_t`` when ``src == drv_first``.
    """
    inv_first = _inverse_lift(drv_first)
    if drv_t == drv_first:
        return src
    if src == drv_first:
        return drv_t
    return AffineMotion.from_matrix(drv_t.homogeneous() @ inv_first @ src.homogeneous())


def fit_background_affine(src_pts, dst_pts, rank_tol: float = 1e-10) -> AffineMotion:
    """Least-squares affine ``A`` minimizing ``sum |A lift(src_i) - dst_i|^2``."""
    src = np.asarray(src_pts, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_pts, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError(f"point lists differ in length: {len(src)} vs {len(dst)}")
    if len(src) < 3:
        raise DegenerateConfiguration(f"need at least 3 correspondences, got {len(src)}")
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    xs = src - src_c
    ys = dst - dst_c
    normal = xs.T @ xs
    ev = np.linalg.eigvalsh(normal)
    if ev[0] <= rank_tol * max(ev[1], 1e-300):
        raise DegenerateConfiguration("correspondences are collinear")
    lin = np.linalg.solve(normal, xs.T @ ys).T
    return AffineMotion(lin, dst_c - lin @ src_c)


def equivariance_residual(motion_x: AffineMotion, motion_xt: AffineMotion, tilde: AffineMotion) -> float:
    """Entrywise L1 distance between ``motion_x`` and ``tilde @ motion_xt``."""
    predicted = tilde.homogeneous() @ motion_xt.homogeneous()
    return float(np.sum(np.abs(motion_x.matrix() - predicted[:2])))


# ---------------------------------------------------------------------------
# analytic Jacobian


def pca_motion_gradient(h) -> np.ndarray:
    """Jacobian of :func:`pca_motion` with respect to each heatmap weight.

    The heatmap is treated as ``w / sum(w)`` evaluated at ``w = h``, so the
    derivative includes the renormalization. Returns an ``(H, W, 6)`` array
    ordered like :meth:`AffineMotion.to_list`.
    """
    h = np.asarray(h, dtype=np.float64)
    mu, cov = hm.moments(h)
    vals, u = sym_eig2(cov)
    l1, l2 = vals
    if l1 < DEGENERATE_EIG or l2 < DEGENERATE_EIG:
        raise DegenerateHeatmap("covariance is (nearly) singular; Jacobian undefined")
    gap = l1 - l2
    if gap < ISOTROPIC_GAP:
        raise IsotropicCovariance("eigenvalues coincide; eigenvector derivative undefined")

    xs, ys = pixel_coords(Grid2(*h.shape))
    dx = xs - mu[0]
    dy = ys - mu[1]
    u1, u2 = u[:, 0], u[:, 1]
    p1 = u1[0] * dx + u1[1] * dy
    p2 = u2[0] * dx + u2[1] * dy
    # d cov / d w_z = (z - mu)(z - mu)^T - cov
    dl1 = p1 * p1 - l1
    dl2 = p2 * p2 - l2
    dphi = p1 * p2 / gap
    r1, r2 = math.sqrt(l1), math.sqrt(l2)

    # column 0 = r1 u1, column 1 = r2 u2; du1 = dphi u2, du2 = -dphi u1
    dcol0 = dl1[..., None] / (2.0 * r1) * u1 + (r1 * dphi)[..., None] * u2
    dcol1 = dl2[..., None] / (2.0 * r2) * u2 - (r2 * dphi)[..., None] * u1
    out = np.empty(h.shape + (6,))
    out[..., 0] = dcol0[..., 0]
    out[..., 1] = dcol1[..., 0]
    out[..., 2] = dx
    out[..., 3] = dcol0[..., 1]
    out[..., 4] = dcol1[..., 1]
    out[..., 5] = dy
    return out


def finite_difference_gradient(h, step: float = 1e-5) -> np.ndarray:
    """Central differences of :func:`pca_motion` on the unnormalized weights."""
    h = np.asarray(h, dtype=np.float64)
    flat = h.ravel()
    out = np.empty((flat.size, 6))
    for i in range(flat.size):
        plus = flat.copy()
        plus[i] += step
        minus = flat.copy()
        minus[i] -= step
        mp = pca_motion((plus / plus.sum()).reshape(h.shape)).to_list()
        mm = pca_motion((minus / minus.sum()).reshape(h.shape)).to_list()
        out[i] = (np.asarray(mp) - np.asarray(mm)) / (2.0 * step)
    return out.reshape(h.shape + (6,))


def gradient_relative_error(analytic, numeric) -> float:
    """Max over the six outputs of ``max|a - n| / max|n|``."""
    a = np.asarray(analytic).reshape(-1, 6)
    n = np.asarray(numeric).reshape(-1, 6)
    scale = np.maximum(np.abs(n).max(axis=0), 1e-12)
    return float((np.abs(a - n).max(axis=0) / scale).max())
