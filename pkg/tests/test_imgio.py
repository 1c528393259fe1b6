"""File-format tests: IMG1 round trips and PGM export."""

import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from aodeconv.imgio import read_img1, write_img1, write_pgm


def read_pgm16(path):
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n")
    header, rest = raw.split(b"\n65535\n", 1)
    dims = header.split(b"\n")[1].split()
    w, h = int(dims[0]), int(dims[1])
    img = np.frombuffer(rest, dtype=">u2").reshape(h, w)
    return img


def test_img1_round_trip_exact(tmp_path):
    rng = np.random.default_rng(30)
    img = rng.normal(size=(13, 7)) * 1e6
    path = tmp_path / "x.img1"
    write_img1(path, img)
    back = read_img1(path)
    assert back.dtype == np.float64
    assert_array_equal(back, img)


def test_img1_header_layout(tmp_path):
    img = np.arange(6, dtype=float).reshape(2, 3)
    path = tmp_path / "x.img1"
    write_img1(path, img)
    raw = path.read_bytes()
    magic, width, height = struct.unpack_from("<4sII", raw)
    assert magic == b"IMG1"
    assert (width, height) == (3, 2)
    assert len(raw) == 12 + 8 * 6
    # row-major: first payload value is img[0, 0], fourth is img[1, 0]
    vals = np.frombuffer(raw, dtype="<f8", offset=12)
    assert vals[0] == img[0, 0]
    assert vals[3] == img[1, 0]


def test_img1_bad_magic(tmp_path):
    path = tmp_path / "bad.img1"
    path.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(ValueError, match="magic"):
        read_img1(path)


def test_img1_truncated(tmp_path):
    img = np.ones((4, 4))
    path = tmp_path / "x.img1"
    write_img1(path, img)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(ValueError, match="expected"):
        read_img1(path)


def test_img1_short_header(tmp_path):
    path = tmp_path / "tiny.img1"
    path.write_bytes(b"IMG")
    with pytest.raises(ValueError, match="truncated"):
        read_img1(path)


def test_pgm_linear_monotone(tmp_path):
    img = np.linspace(0.0, 100.0, 64).reshape(8, 8)
    path = tmp_path / "x.pgm"
    write_pgm(path, img, stretch="linear")
    out = read_pgm16(path).ravel()
    assert out[0] == 0
    assert out[-1] == 65535
    assert np.all(np.diff(out.astype(int)) >= 0)


def test_pgm_sqrt_monotone_and_bounded(tmp_path):
    rng = np.random.default_rng(31)
    img = rng.random((16, 16)) * 500
    path = tmp_path / "x.pgm"
    write_pgm(path, img, stretch="sqrt")
    out = read_pgm16(path)
    assert out.min() >= 0 and out.max() <= 65535
    # monotone: larger input pixel -> not smaller output pixel
    flat_in = img.ravel()
    flat_out = out.ravel().astype(int)
    order = np.argsort(flat_in)
    assert np.all(np.diff(flat_out[order]) >= 0)


def test_pgm_dual_stretch_covers_both_ranges(tmp_path):
    img = np.concatenate(
        [np.linspace(0, 1, 32), np.linspace(50, 100, 32)]
    ).reshape(8, 8)
    path = tmp_path / "x.pgm"
    write_pgm(path, img, stretch="dual", pivot=2.0)
    out = read_pgm16(path).ravel().astype(int)
    low = out[out <= 32767]
    high = out[out >= 32768]
    assert low.size and high.size
    assert low.max() - low.min() > 10000  # faint regime resolved
    assert high.max() - high.min() > 10000  # bright regime resolved


def test_pgm_unknown_stretch(tmp_path):
    with pytest.raises(ValueError, match="stretch"):
        write_pgm(tmp_path / "x.pgm", np.ones((4, 4)), stretch="log")
