"""Tensor/mask container invariants and on-disk format round-trips."""

import struct

import numpy as np
import pytest

from adage.errors import (
    InvalidDimensions,
    MagicMismatch,
    MissingPaletteEntry,
    NonFiniteValue,
    RoleViolation,
    TruncatedPayload,
    UnsupportedVersion,
)
from adage.raster import (
    LogitMap,
    Mask2D,
    TensorCHW,
    read_mask,
    read_tensor,
    write_mask,
    write_pgm,
    write_tensor,
)

rng = np.random.default_rng(1101)


def test_tensor_roundtrip_bitwise(tmp_path):
    x = rng.standard_normal((5, 9, 13)).astype(np.float32)
    p = tmp_path / "t.adgt"
    write_tensor(TensorCHW(x), p)
    back = read_tensor(p)
    assert back.data.dtype == np.float32
    assert back.data.shape == (5, 9, 13)
    assert np.array_equal(back.data.view(np.uint32), x.view(np.uint32))

    # rewriting the loaded tensor must reproduce the file byte-for-byte
    p2 = tmp_path / "t2.adgt"
    write_tensor(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_tensor_header_layout(tmp_path):
    x = np.zeros((2, 3, 4), dtype=np.float32)
    p = tmp_path / "t.adgt"
    write_tensor(TensorCHW(x), p)
    raw = p.read_bytes()
    assert raw[:4] == b"ADGT"
    version, c, h, w = struct.unpack("<4I", raw[4:20])
    assert (version, c, h, w) == (1, 2, 3, 4)
    assert len(raw) == 20 + 4 * 2 * 3 * 4


def test_mask_roundtrip(tmp_path):
    m = (rng.random((7, 5)) < 0.5).astype(np.uint8)
    p = tmp_path / "m.adgm"
    write_mask(Mask2D(m), p)
    back = read_mask(p)
    assert back.data.dtype == np.uint8
    assert np.array_equal(back.data, m)
    raw = p.read_bytes()
    assert raw[:4] == b"ADGM"
    assert struct.unpack("<3I", raw[4:16]) == (1, 7, 5)
    assert len(raw) == 16 + 7 * 5


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "x.adgt"
    p.write_bytes(b"JUNK" + b"\x00" * 32)
    with pytest.raises(MagicMismatch):
        read_tensor(p)
    with pytest.raises(MagicMismatch):
        read_mask(p)


def test_magic_checked_before_truncation(tmp_path):
    # a 4-byte file with the wrong magic is a MagicMismatch, not truncation
    p = tmp_path / "x.adgt"
    p.write_bytes(b"NOPE")
    with pytest.raises(MagicMismatch):
        read_tensor(p)


def test_truncated_header_and_payload(tmp_path):
    p = tmp_path / "x.adgt"
    p.write_bytes(b"ADGT\x01\x00\x00")
    with pytest.raises(TruncatedPayload):
        read_tensor(p)

    good = tmp_path / "g.adgt"
    write_tensor(TensorCHW(np.ones((1, 2, 2), dtype=np.float32)), good)
    clipped = tmp_path / "c.adgt"
    clipped.write_bytes(good.read_bytes()[:-3])
    with pytest.raises(TruncatedPayload):
        read_tensor(clipped)
    padded = tmp_path / "p.adgt"
    padded.write_bytes(good.read_bytes() + b"\x00")
    with pytest.raises(TruncatedPayload):
        read_tensor(padded)


def test_unsupported_version(tmp_path):
    p = tmp_path / "x.adgt"
    p.write_bytes(b"ADGT" + struct.pack("<4I", 9, 1, 1, 1) + b"\x00" * 4)
    with pytest.raises(UnsupportedVersion):
        read_tensor(p)


def test_zero_dimension_rejected(tmp_path):
    p = tmp_path / "x.adgm"
    p.write_bytes(b"ADGM" + struct.pack("<III", 1, 0, 5))
    with pytest.raises(InvalidDimensions):
        read_mask(p)


def test_nonfinite_payload_rejected(tmp_path):
    x = np.ones((1, 1, 2), dtype=np.float32)
    p = tmp_path / "t.adgt"
    write_tensor(TensorCHW(x), p)
    raw = bytearray(p.read_bytes())
    raw[20:24] = struct.pack("<f", float("nan"))
    p.write_bytes(bytes(raw))
    with pytest.raises(NonFiniteValue):
        read_tensor(p)


def test_container_validation():
    with pytest.raises(InvalidDimensions):
        TensorCHW(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(InvalidDimensions):
        LogitMap(np.zeros((2, 2), dtype=np.float32))
    bad = np.zeros((1, 2, 2), dtype=np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteValue):
        TensorCHW(bad)


def test_containers_normalize_layout():
    # float64 input and strided views are converted to contiguous f32
    t = TensorCHW(np.zeros((2, 3, 3), dtype=np.float64))
    assert t.data.dtype == np.float32

    base = rng.standard_normal((4, 8, 8)).astype(np.float32)
    view = base[:, ::2, ::2]
    assert not view.flags["C_CONTIGUOUS"]
    t2 = TensorCHW(view)
    assert t2.data.flags["C_CONTIGUOUS"]
    assert np.array_equal(t2.data, view)


def test_tensor_crop():
    x = rng.standard_normal((3, 10, 12)).astype(np.float32)
    t = TensorCHW(x)
    sub = t.crop(slice(2, 7), slice(3, 9))
    assert sub.data.shape == (3, 5, 6)
    assert sub.data.flags["C_CONTIGUOUS"]
    assert np.array_equal(sub.data, x[:, 2:7, 3:9])


def test_mask_role_helpers():
    m = Mask2D(np.array([[0, 1], [2, 1]], dtype=np.uint8))
    m.require_categories(3)
    with pytest.raises(RoleViolation):
        m.require_categories(2)
    with pytest.raises(RoleViolation):
        m.require_binary()
    Mask2D(np.zeros((2, 2), dtype=np.uint8)).require_binary()


def test_pgm_output(tmp_path):
    m = Mask2D(np.array([[0, 1], [1, 0]], dtype=np.uint8))
    p = tmp_path / "m.pgm"
    write_pgm(m, {0: 30, 1: 220}, p)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert raw[len(b"P5\n2 2\n255\n"):] == bytes([30, 220, 220, 30])


def test_pgm_missing_palette_entry(tmp_path):
    m = Mask2D(np.array([[0, 7]], dtype=np.uint8))
    with pytest.raises(MissingPaletteEntry):
        write_pgm(m, {0: 0}, tmp_path / "m.pgm")
