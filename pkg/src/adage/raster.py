"""Bit-exact container I/O for tensors, masks, and analysis map images.

Two tiny little-endian formats carry all pixel data:

  ADGT  magic "ADGT" | u32 version=1 | u32 C | u32 H | u32 W | C*H*W f32
  ADGM  magic "ADGM" | u32 version=1 | u32 H | u32 W | H*W u8

Values are stored row-major, channel-major, index order (c*H + h)*W + w.
Analysis maps additionally export as binary PGM (P5, maxval 255).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidDimensions,
    IoFailure,
    MagicMismatch,
    MissingPaletteEntry,
    NonFiniteValue,
    RoleViolation,
    TruncatedPayload,
    UnsupportedVersion,
)

TENSOR_MAGIC = b"ADGT"
MASK_MAGIC = b"ADGM"
VERSION = 1

_F32 = np.dtype("<f4")
_U8 = np.dtype("u1")


def _check_finite(flat: np.ndarray) -> None:
    bad = ~np.isfinite(flat)
    if bad.any():
        raise NonFiniteValue(int(np.argmax(bad)))


@dataclass(frozen=True, eq=False)
class TensorCHW:
    """Channel-major 3D grid of f32 values, shape (C, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=_F32)
        if arr.ndim != 3:
            raise InvalidDimensions(arr.shape)
        if min(arr.shape) < 1:
            raise InvalidDimensions(arr.shape)
        _check_finite(arr.ravel())
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def crop(self, rows: slice, cols: slice) -> "TensorCHW":
        """Spatial window over all channels (copies, stays contiguous)."""
        return TensorCHW(np.ascontiguousarray(self.data[:, rows, cols]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorCHW):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class Mask2D:
    """2D grid of u8 category values, shape (H, W)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=_U8)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise InvalidDimensions(arr.shape)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def require_binary(self) -> "Mask2D":
        """Validate the binary role: values must be 0 or 1."""
        bad = self.data > 1
        if bad.any():
            raise RoleViolation(int(self.data[bad][0]), "binary")
        return self

    def require_categories(self, count: int) -> "Mask2D":
        """Validate the categorical role: values must be < count."""
        bad = self.data >= count
        if bad.any():
            raise RoleViolation(int(self.data[bad][0]), f"categorical({count})")
        return self

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mask2D):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class LogitMap:
    """Model output of shape (n_class, H, W), f32."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=_F32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise InvalidDimensions(arr.shape)
        _check_finite(arr.ravel())
        object.__setattr__(self, "data", arr)

    @property
    def n_class(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LogitMap):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )


# --- readers ----------------------------------------------------------------


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def _parse_header(blob: bytes, magic: bytes, n_dims: int, path) -> tuple:
    """Validate magic/version and return the dimension tuple.

    The payload is never sliced (let alone allocated) before the declared
    sizes have been checked against the real byte length.
    """
    if len(blob) >= 4 and blob[:4] != magic:
        raise MagicMismatch(magic, blob[:4], path)
    head = 4 + 4 * (1 + n_dims)
    if len(blob) < head:
        raise TruncatedPayload(head, len(blob), path)
    fields = struct.unpack_from(f"<{1 + n_dims}I", blob, 4)
    if fields[0] != VERSION:
        raise UnsupportedVersion(fields[0])
    dims = fields[1:]
    if min(dims) < 1:
        raise InvalidDimensions(dims)
    return dims


def read_tensor(path) -> TensorCHW:
    """Read an ADGT file; payload must be exactly C*H*W little-endian f32."""
    blob = _read_bytes(path)
    c, h, w = _parse_header(blob, TENSOR_MAGIC, 3, path)
    declared = 20 + 4 * c * h * w
    if len(blob) != declared:
        raise TruncatedPayload(declared - 20, len(blob) - 20, path)
    flat = np.frombuffer(blob, dtype=_F32, offset=20)
    _check_finite(flat)
    return TensorCHW(flat.reshape(c, h, w).copy())


def write_tensor(t: TensorCHW, path) -> None:
    header = TENSOR_MAGIC + struct.pack(
        "<IIII", VERSION, t.channels, t.height, t.width
    )
    payload = np.ascontiguousarray(t.data, dtype=_F32).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def read_mask(path) -> Mask2D:
    """Read an ADGM file; payload must be exactly H*W bytes."""
    blob = _read_bytes(path)
    h, w = _parse_header(blob, MASK_MAGIC, 2, path)
    declared = 16 + h * w
    if len(blob) != declared:
        raise TruncatedPayload(declared - 16, len(blob) - 16, path)
    flat = np.frombuffer(blob, dtype=_U8, offset=16)
    return Mask2D(flat.reshape(h, w).copy())


def write_mask(m: Mask2D, path) -> None:
    header = MASK_MAGIC + struct.pack("<III", VERSION, m.height, m.width)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(m.data, dtype=_U8).tobytes())
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def write_pgm(m: Mask2D, palette: dict, path) -> None:
    """Export a categorical mask as binary PGM (P5, maxval 255).

    `palette` maps each category present in the mask to a gray level 0..255;
    a category without an entry raises MissingPaletteEntry.
    """
    lut = np.zeros(256, dtype=_U8)
    present = np.unique(m.data)
    for cat in present:
        if int(cat) not in palette:
            raise MissingPaletteEntry(int(cat))
        lut[cat] = palette[int(cat)]
    body = lut[m.data]
    header = f"P5\n{m.width} {m.height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(body.tobytes())
    except OSError as exc:
        raise IoFailure(path, exc) from exc
