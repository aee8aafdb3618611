import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regionmotion.errors import BadMagic, MalformedHeader, TruncatedData, UnsupportedMaxval
from regionmotion.tensor_io import (
    as_image,
    quantize,
    read_image,
    read_tensor,
    write_image,
    write_tensor,
)


def _write(path, data: bytes):
    with open(path, "wb") as f:
        f.write(data)


def test_read_p5_maps_bytes_to_unit_interval(tmp_path):
    p = tmp_path / "a.pgm"
    _write(p, b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = read_image(p)
    assert img.shape == (2, 2, 1)
    np.testing.assert_array_equal(img.ravel(), [0.0, 1.0, 128 / 255, 64 / 255])


def test_read_p6_layout(tmp_path):
    p = tmp_path / "a.ppm"
    _write(p, b"P6\n# comment\n2 1\n255\n" + bytes([1, 2, 3, 4, 5, 6]))
    img = read_image(p)
    assert img.shape == (1, 2, 3)
    np.testing.assert_array_equal(img[0, 1] * 255, [4, 5, 6])


def test_p6_wrong_payload_length(tmp_path):
    p = tmp_path / "a.ppm"
    _write(p, b"P6\n2 2\n255\n" + bytes(11))
    with pytest.raises(TruncatedData):
        read_image(p)


def test_maxval_65535_rejected(tmp_path):
    p = tmp_path / "a.pgm"
    _write(p, b"P5\n1 1\n65535\n" + bytes(2))
    with pytest.raises(UnsupportedMaxval):
        read_image(p)


@pytest.mark.parametrize("data", [b"P3\n1 1\n255\n0", b"P5\n1\n", b"P5\nx 1\n255\n\x00", b""])
def test_malformed_header(tmp_path, data):
    p = tmp_path / "bad.pgm"
    _write(p, data)
    with pytest.raises(MalformedHeader):
        read_image(p)


@pytest.mark.parametrize("value, byte", [(0.5, 128), (1.2, 255), (0.0, 0), (-0.3, 0)])
def test_quantization(value, byte):
    assert quantize(np.array([value]))[0] == byte


def test_write_then_read_quantizes(tmp_path):
    p = tmp_path / "q.pgm"
    write_image(np.array([[0.5, 1.2], [0.0, 0.25]]), p)
    assert read_image(p).ravel().tolist() == [128 / 255, 1.0, 0.0, 64 / 255]


def test_tensor_byte_accounting(tmp_path):
    p = tmp_path / "t.mtn"
    write_tensor(np.arange(6, dtype=np.float32).reshape(2, 3), p)
    assert os.path.getsize(p) == 40
    raw = open(p, "rb").read()
    assert raw[:4] == b"MTN1"
    assert struct.unpack("<III", raw[4:16]) == (2, 2, 3)


def test_tensor_bad_magic(tmp_path):
    p = tmp_path / "t.mtn"
    _write(p, b"XXXX" + struct.pack("<II", 1, 1) + b"\0\0\0\0")
    with pytest.raises(BadMagic):
        read_tensor(p)


def test_tensor_truncated(tmp_path):
    p = tmp_path / "t.mtn"
    _write(p, b"MTN1" + struct.pack("<III", 2, 2, 3) + bytes(20))
    with pytest.raises(TruncatedData):
        read_tensor(p)


def test_as_image_layouts():
    assert as_image(np.zeros((3, 4))).shape == (3, 4, 1)
    with pytest.raises(ValueError):
        as_image(np.zeros((3, 4, 2)))


@settings(max_examples=200, deadline=None)
@given(
    dims=st.lists(st.integers(1, 6), min_size=1, max_size=4),
    seed=st.integers(0, 2**32 - 1),
)
def test_tensor_round_trip_bit_identical(tmp_path_factory, dims, seed):
    rng = np.random.default_rng(seed)
    t = (rng.standard_normal(dims) * 10 ** rng.uniform(-5, 5)).astype(np.float32)
    p = tmp_path_factory.mktemp("t") / "x.mtn"
    write_tensor(t, p)
    back = read_tensor(p)
    assert back.shape == t.shape
    assert back.tobytes() == t.tobytes()


@settings(max_examples=200, deadline=None)
@given(
    h=st.integers(1, 8),
    w=st.integers(1, 8),
    c=st.sampled_from([1, 3]),
    seed=st.integers(0, 2**32 - 1),
)
def test_image_round_trip_within_quantization(tmp_path_factory, h, w, c, seed):
    img = np.random.default_rng(seed).uniform(0, 1, size=(h, w, c))
    p = tmp_path_factory.mktemp("i") / ("x.pgm" if c == 1 else "x.ppm")
    write_image(img, p)
    back = read_image(p)
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12
