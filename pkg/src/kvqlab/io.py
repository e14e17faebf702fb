"""On-disk formats: float32 tensor files and packed quantized dumps.

Both formats are a single ASCII header line terminated by a newline,
followed by a raw little-endian payload. Tensors store row-major float32
values; quantized dumps store one (float32 scale, float32 zero) pair per
group in traversal order, then the packed code stream. In-memory arithmetic
stays float64; only the files are 32-bit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .numerics import as_matrix
from .quantizer import ALLOWED_BITS, Axis, QuantizedTensor, QuantSpec, _padded_count

__all__ = ["write_tensor", "read_tensor", "write_quantized", "read_quantized"]

TENSOR_MAGIC = "KVT1"
QUANT_MAGIC = "KVQ1"


def write_tensor(path, m) -> None:
    """Write `<magic> <rows> <cols> f32` plus row-major float32 payload."""
    m = as_matrix(m)
    header = f"{TENSOR_MAGIC} {m.shape[0]} {m.shape[1]} f32\n".encode("ascii")
    Path(path).write_bytes(header + m.astype("<f4").tobytes(order="C"))


def _split_header(data: bytes, path) -> tuple[list[str], int]:
    newline = data.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: no header line found (byte offset 0)")
    try:
        fields = data[:newline].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not ASCII (byte offset 0)") from exc
    return fields, newline + 1


def read_tensor(path) -> np.ndarray:
    """Read a tensor file back as a float64 matrix."""
    data = Path(path).read_bytes()
    fields, offset = _split_header(data, path)
    if len(fields) != 4 or fields[0] != TENSOR_MAGIC or fields[3] != "f32":
        raise FormatError(f"{path}: bad tensor header {fields!r} (byte offset 0)")
    try:
        rows, cols = int(fields[1]), int(fields[2])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer dimensions in header (byte offset 0)") from exc
    if rows < 0 or cols < 0:
        raise FormatError(f"{path}: negative dimensions in header (byte offset 0)")
    payload = data[offset:]
    expected = rows * cols * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"(payload starts at byte offset {offset})"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return values.reshape(rows, cols)


def write_quantized(path, q: QuantizedTensor) -> None:
    """Write header, per-group (scale, zero) float32 pairs, then packed codes."""
    spec = q.spec
    header = (
        f"{QUANT_MAGIC} {q.rows} {q.cols} {spec.bits} {spec.axis.value} {spec.group_size}\n"
    ).encode("ascii")
    meta = np.empty(2 * q.group_count, dtype="<f4")
    meta[0::2] = q.scales
    meta[1::2] = q.zeros
    Path(path).write_bytes(header + meta.tobytes() + q.codes)


def read_quantized(path) -> QuantizedTensor:
    """Read a quantized dump back into a QuantizedTensor."""
    data = Path(path).read_bytes()
    fields, offset = _split_header(data, path)
    if len(fields) != 6 or fields[0] != QUANT_MAGIC:
        raise FormatError(f"{path}: bad quantized-dump header {fields!r} (byte offset 0)")
    try:
        rows, cols, bits, group_size = (
            int(fields[1]),
            int(fields[2]),
            int(fields[3]),
            int(fields[5]),
        )
        axis = Axis(fields[4])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header field (byte offset 0): {exc}") from exc
    if bits not in ALLOWED_BITS:
        raise FormatError(f"{path}: bits {bits} not in {ALLOWED_BITS} (byte offset 0)")
    spec = QuantSpec(bits=bits, axis=axis, group_size=group_size)
    lines, extent = (rows, cols) if axis is Axis.PER_TOKEN else (cols, rows)
    if extent <= 0 or extent % group_size:
        raise FormatError(
            f"{path}: extent {extent} is not a positive multiple of group size {group_size}"
        )
    n_groups = lines * (extent // group_size)
    meta_bytes = 8 * n_groups
    code_bytes = _padded_count(rows * cols, bits) * bits // 8
    expected = meta_bytes + code_bytes
    if len(data) - offset != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - offset} bytes, expected {expected} "
            f"(payload starts at byte offset {offset})"
        )
    meta = np.frombuffer(data[offset : offset + meta_bytes], dtype="<f4").astype(np.float64)
    return QuantizedTensor(
        rows=rows,
        cols=cols,
        spec=spec,
        codes=data[offset + meta_bytes :],
        scales=meta[0::2],
        zeros=meta[1::2],
    )
