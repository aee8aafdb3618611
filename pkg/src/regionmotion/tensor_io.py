"""Binary image and tensor serialization.

Images are ``float64`` arrays of shape ``(H, W, C)`` with ``C`` in {1, 3} and
values in [0, 1]. Tensors are ``float32`` arrays of any rank.

Pixel convention used throughout the package: a point ``z = (x, y)`` has
``x`` running along the width and ``y`` along the height, pixel centers sit
at integer coordinates and the origin is the center of the top-left pixel.
So ``image[y, x]`` is the pixel at ``z = (x, y)``.
"""
from __future__ import annotations

import os
import struct
import sys
from typing import NamedTuple

import numpy as np

from .errors import (
    BadMagic,
    DimOverflow,
    IoFailure,
    MalformedHeader,
    TruncatedData,
    UnsupportedMaxval,
)

TENSOR_MAGIC = b"MTN1"


class Grid2(NamedTuple):
    height: int
    width: int


def grid_of(array: np.ndarray) -> Grid2:
    return Grid2(int(array.shape[0]), int(array.shape[1]))


def pixel_coords(grid: Grid2) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(xs, ys)``, each of shape ``(H, W)``, in float64 pixel units."""
    ys, xs = np.mgrid[0 : grid.height, 0 : grid.width]
    return xs.astype(np.float64), ys.astype(np.float64)


def as_image(data, channels: int | None = None) -> np.ndarray:
    """Coerce ``data`` into the ``(H, W, C)`` image layout."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"image must be HxW, HxWx1 or HxWx3, got {img.shape}")
    if channels is not None and img.shape[2] != channels:
        raise ValueError(f"expected {channels} channels, got {img.shape[2]}")
    return img


# ---------------------------------------------------------------------------
# PGM / PPM


def _read_header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the first payload byte (one
    whitespace character after the last token).
    """
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedHeader("unexpected end of header")
        tokens.append(buf[start:pos])
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise MalformedHeader("header must end with a single whitespace byte")
    return tokens, pos + 1


def _parse_netpbm(buf: bytes) -> tuple[np.ndarray, int]:
    """Parse a P5/P6 file into a ``uint8`` array of shape ``(H, W, C)``."""
    tokens, offset = _read_header_tokens(buf, 4)
    magic = tokens[0]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise MalformedHeader(f"unsupported magic {magic!r}, expected P5 or P6")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedHeader(f"non-integer header field: {exc}") from None
    if width < 1 or height < 1:
        raise MalformedHeader(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxval(f"maxval {maxval} not supported (only 255)")
    expected = width * height * channels
    payload = buf[offset:]
    if len(payload) != expected:
        raise TruncatedData(f"expected {expected} payload bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return arr, maxval


def read_bytes_image(path) -> np.ndarray:
    """Read a P5/P6 file and return the raw ``uint8`` samples ``(H, W, C)``."""
    with open(path, "rb") as f:
        buf = f.read()
    arr, _ = _parse_netpbm(buf)
    return arr.copy()


def read_image(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) image with maxval 255.

    Sample values ``v`` are mapped to ``v / 255``.
    """
    return read_bytes_image(path).astype(np.float64) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round ``v * 255`` half-up to a byte (0.5 -> 128)."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_bytes_image(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    magic = {1: b"P5", 3: b"P6"}.get(c)
    if magic is None:
        raise ValueError(f"cannot write {c}-channel image")
    header = magic + b"\n%d %d\n255\n" % (w, h)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(np.ascontiguousarray(arr).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_image(img, path) -> None:
    """Write an image as P5 (1 channel) or P6 (3 channels)."""
    write_bytes_image(quantize(as_image(img)), path)


# ---------------------------------------------------------------------------
# MTN1 tensors


def tensor_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
    return header + np.ascontiguousarray(t).tobytes()


def write_tensor(t, path) -> None:
    """Write ``t`` in MTN1 format (magic, u32 rank, u32 dims, f32 LE data)."""
    t = np.asarray(t)
    if any(d < 1 for d in t.shape):
        raise ValueError(f"tensor dims must be positive, got {t.shape}")
    try:
        with open(path, "wb") as f:
            f.write(tensor_bytes(t))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def parse_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        if buf[:4] != TENSOR_MAGIC[: len(buf[:4])]:
            raise BadMagic(f"bad magic {buf[:4]!r}")
        raise TruncatedData("file shorter than MTN1 header")
    if buf[:4] != TENSOR_MAGIC:
        raise BadMagic(f"bad magic {buf[:4]!r}")
    (rank,) = struct.unpack_from("<I", buf, 4)
    if len(buf) < 8 + 4 * rank:
        raise TruncatedData("file shorter than declared dims")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = 1
    for d in dims:
        count *= d
    if count * 4 > sys.maxsize:
        raise DimOverflow(f"dims {dims} exceed platform limit")
    offset = 8 + 4 * rank
    if len(buf) - offset != 4 * count:
        raise TruncatedData(f"expected {4 * count} data bytes, found {len(buf) - offset}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return data.reshape(dims).astype(np.float32)


def read_tensor(path) -> np.ndarray:
    """Read an MTN1 tensor as a ``float32`` array."""
    with open(path, "rb") as f:
        return parse_tensor(f.read())


def ensure_dir(path) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {path}: {exc}") from exc
