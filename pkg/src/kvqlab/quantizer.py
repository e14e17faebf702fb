"""Group-wise round-to-nearest quantization with low-bit code packing.

A matrix is split into groups along one axis: per-token grouping runs along
the channels of one token row, per-channel grouping along the token rows of
one channel. Each group stores its minimum as the zero-point and
(max - min) / (2^bits - 1) as the scale; codes are the half-away-from-zero
rounding of (x - zero) / scale, clamped to the code range, and packed
LSB-first into a byte stream.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError, SpecError
from .numerics import as_matrix

__all__ = [
    "ALLOWED_BITS",
    "Axis",
    "QuantSpec",
    "QuantizedTensor",
    "quantize",
    "dequantize",
    "quant_error",
    "pack_codes",
    "unpack_codes",
]

ALLOWED_BITS = (1, 2, 4, 8)


class Axis(enum.Enum):
    """Grouping axis for min/max statistics."""

    PER_CHANNEL = "channel"
    PER_TOKEN = "token"


@dataclass(frozen=True)
class QuantSpec:
    """Bit width, grouping axis, and group size.

    bits=None is the passthrough sentinel: the spec describes an exact
    float store (used for reference runs) and cannot be fed to quantize().
    """

    bits: int | None
    axis: Axis = Axis.PER_TOKEN
    group_size: int = 32

    def __post_init__(self):
        if self.bits is not None and self.bits not in ALLOWED_BITS:
            raise SpecError(f"bits must be one of {ALLOWED_BITS} or None, got {self.bits!r}")
        if not isinstance(self.axis, Axis):
            raise SpecError(f"axis must be an Axis member, got {self.axis!r}")
        if self.group_size < 1:
            raise SpecError(f"group_size must be >= 1, got {self.group_size}")

    @property
    def is_passthrough(self) -> bool:
        return self.bits is None


@dataclass(frozen=True)
class QuantizedTensor:
    """Packed codes plus per-group scale and zero-point for one matrix.

    Groups follow the grouping traversal: one line per row for per-token
    grouping, one line per column for per-channel grouping, with lines in
    index order and group_size consecutive elements per group. Codes appear
    in traversal order in the packed stream, padded with zero codes up to a
    whole byte.
    """

    rows: int
    cols: int
    spec: QuantSpec
    codes: bytes
    scales: np.ndarray
    zeros: np.ndarray

    @property
    def count(self) -> int:
        return self.rows * self.cols

    @property
    def group_count(self) -> int:
        return len(self.scales)

    def group_index(self, row: int, col: int) -> int:
        """Index of the group holding element (row, col)."""
        g = self.spec.group_size
        if self.spec.axis is Axis.PER_TOKEN:
            return row * (self.cols // g) + col // g
        return col * (self.rows // g) + row // g


def pack_codes(codes, bits: int) -> bytes:
    """Pack integer codes at `bits` bits each into a byte stream.

    Code j occupies stream bits [j*bits, (j+1)*bits), least-significant bit
    first within each byte. The code count times bits must fill whole bytes;
    callers pad with zero codes and remember the logical count.
    """
    if bits not in ALLOWED_BITS:
        raise SpecError(f"bits must be one of {ALLOWED_BITS}, got {bits!r}")
    if isinstance(codes, np.ndarray):
        codes = codes.tolist()
    limit = 1 << bits
    out = bytearray()
    acc = 0
    filled = 0
    for c in codes:
        if not 0 <= c < limit:
            raise ValueError(f"code {c} does not fit in {bits} bits")
        acc |= c << filled
        filled += bits
        if filled == 8:
            out.append(acc)
            acc = 0
            filled = 0
    if filled:
        raise ValueError("code count times bits must fill whole bytes")
    return bytes(out)


def unpack_codes(data: bytes, bits: int, count: int) -> np.ndarray:
    """Exact inverse of pack_codes for the first `count` codes."""
    if bits not in ALLOWED_BITS:
        raise SpecError(f"bits must be one of {ALLOWED_BITS}, got {bits!r}")
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if count == 0:
        return np.zeros(0, dtype=np.uint8)
    if count * bits > 8 * len(data):
        raise FormatError(f"need {count * bits} bits but stream has only {8 * len(data)}")
    if count <= 128:
        per_byte = 8 // bits
        mask = (1 << bits) - 1
        out = bytearray(count)
        for j in range(count):
            out[j] = (data[j // per_byte] >> (bits * (j % per_byte))) & mask
        return np.frombuffer(bytes(out), dtype=np.uint8)
    raw = np.frombuffer(data, dtype=np.uint8)
    bit_values = np.unpackbits(raw, count=count * bits, bitorder="little")
    shifts = np.arange(bits, dtype=np.uint8)
    return (bit_values.reshape(count, bits) << shifts).sum(axis=1).astype(np.uint8)


def _lines(m: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """View of m with the grouping axis along axis 1."""
    return m if spec.axis is Axis.PER_TOKEN else m.T


def _padded_count(count: int, bits: int) -> int:
    per_byte = 8 // bits
    return count + (-count % per_byte)


def quantize(m, spec: QuantSpec) -> QuantizedTensor:
    """Group-wise RTN quantization of a matrix.

    The extent along the grouping axis must be a positive multiple of the
    group size (the cache layer guarantees this for its flush blocks). A
    degenerate group (max == min) stores scale 1 and all-zero codes so it
    reconstructs its zero-point exactly.
    """
    m = as_matrix(m)
    if spec.is_passthrough:
        raise SpecError("cannot quantize with a passthrough spec")
    lines = _lines(m, spec)
    n_lines, extent = lines.shape
    g = spec.group_size
    if extent == 0 or extent % g:
        raise ShapeError(f"grouping extent {extent} is not a positive multiple of group size {g}")
    grouped = lines.reshape(n_lines, extent // g, g)
    zeros = grouped.min(axis=2)
    spread = grouped.max(axis=2) - zeros
    scales = np.where(spread == 0.0, 1.0, spread / (2**spec.bits - 1))
    q = (grouped - zeros[:, :, None]) / scales[:, :, None]
    codes = np.clip(np.floor(q + 0.5), 0, 2**spec.bits - 1).astype(np.uint8)
    flat = codes.reshape(-1)
    pad = _padded_count(flat.size, spec.bits) - flat.size
    if pad:
        flat = np.concatenate([flat, np.zeros(pad, dtype=np.uint8)])
    return QuantizedTensor(
        rows=m.shape[0],
        cols=m.shape[1],
        spec=spec,
        codes=pack_codes(flat, spec.bits),
        scales=scales.reshape(-1),
        zeros=zeros.reshape(-1),
    )


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Reconstruct the matrix: code * scale + zero-point per element."""
    spec = q.spec
    count = q.count
    expected_bytes = _padded_count(count, spec.bits) * spec.bits // 8
    if len(q.codes) != expected_bytes:
        raise FormatError(f"code stream is {len(q.codes)} bytes, expected {expected_bytes}")
    g = spec.group_size
    if spec.axis is Axis.PER_TOKEN:
        n_lines, extent = q.rows, q.cols
    else:
        n_lines, extent = q.cols, q.rows
    if len(q.scales) != n_lines * (extent // g) or len(q.zeros) != len(q.scales):
        raise FormatError("scale/zero count does not match the group layout")
    codes = unpack_codes(q.codes, spec.bits, count).astype(np.float64)
    grouped = codes.reshape(n_lines, extent // g, g)
    scales = np.asarray(q.scales, dtype=np.float64).reshape(n_lines, extent // g)
    zeros = np.asarray(q.zeros, dtype=np.float64).reshape(n_lines, extent // g)
    lines = grouped * scales[:, :, None] + zeros[:, :, None]
    out = lines.reshape(n_lines, extent)
    return out if spec.axis is Axis.PER_TOKEN else out.T.copy()


def quant_error(m, spec: QuantSpec) -> np.ndarray:
    """Elementwise quantization error m - dequantize(quantize(m))."""
    m = as_matrix(m)
    return m - dequantize(quantize(m, spec))
