"""Per-layer key/value history with a float residual tail.

New tokens land in a float residual buffer. Once the buffer outgrows the
configured residual length, the oldest group of rows is quantized (keys
per-channel, values per-token) into an immutable block; already-quantized
blocks are never touched again. Both keys and values keep the residual tail
so their rows stay aligned. With passthrough specs blocks store exact
floats through the same bookkeeping, which gives a bit-identical reference
path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SpecError, StateError
from .numerics import as_matrix
from .quantizer import Axis, QuantizedTensor, QuantSpec, dequantize, quantize

__all__ = ["CacheConfig", "LayerKVCache"]


@dataclass(frozen=True)
class CacheConfig:
    """Per-layer cache parameters: specs for both matrices, residual length,
    and the head dimension."""

    key_spec: QuantSpec
    value_spec: QuantSpec
    residual_length: int
    head_dim: int

    def __post_init__(self):
        if self.head_dim < 1:
            raise SpecError(f"head_dim must be positive, got {self.head_dim}")
        if self.residual_length < 0:
            raise SpecError(f"residual_length must be non-negative, got {self.residual_length}")
        if self.residual_length % self.key_spec.group_size:
            raise SpecError(
                f"residual_length {self.residual_length} must be a multiple of the "
                f"key group size {self.key_spec.group_size}"
            )
        if not self.key_spec.is_passthrough and self.key_spec.axis is not Axis.PER_CHANNEL:
            raise SpecError("keys are quantized per-channel")
        if not self.value_spec.is_passthrough:
            if self.value_spec.axis is not Axis.PER_TOKEN:
                raise SpecError("values are quantized per-token")
            if self.head_dim % self.value_spec.group_size:
                raise SpecError(
                    f"head_dim {self.head_dim} must be a multiple of the value "
                    f"group size {self.value_spec.group_size}"
                )


@dataclass(frozen=True)
class _Block:
    """One flushed group of rows: packed form plus its reconstructed floats.

    quantized is None in passthrough mode, where rows holds exact values.
    """

    quantized: QuantizedTensor | None
    rows: np.ndarray


class LayerKVCache:
    """Quantized key/value history plus float residual tail for one layer.

    Single-writer: one actor appends at a time. Materialized matrices are
    fresh snapshots and safe to share.
    """

    def __init__(self, config: CacheConfig):
        self.config = config
        self._key_blocks: list[_Block] = []
        self._value_blocks: list[_Block] = []
        self._residual_keys: list[np.ndarray] = []
        self._residual_values: list[np.ndarray] = []
        self.token_count = 0

    @property
    def residual_rows(self) -> int:
        return len(self._residual_keys)

    @property
    def quantized_rows(self) -> int:
        return self.token_count - self.residual_rows

    @property
    def key_blocks(self) -> tuple[QuantizedTensor | None, ...]:
        return tuple(b.quantized for b in self._key_blocks)

    @property
    def value_blocks(self) -> tuple[QuantizedTensor | None, ...]:
        return tuple(b.quantized for b in self._value_blocks)

    def append_token(self, k_vec, v_vec) -> None:
        """Append one token's key/value rows, flushing full groups out of the
        residual buffer when it exceeds the residual length."""
        h = self.config.head_dim
        k = as_matrix(k_vec)
        v = as_matrix(v_vec)
        if k.shape != (1, h) or v.shape != (1, h):
            raise ShapeError(f"expected 1x{h} key and value rows, got {k.shape} and {v.shape}")
        self._residual_keys.append(k[0].copy())
        self._residual_values.append(v[0].copy())
        self.token_count += 1
        g = self.config.key_spec.group_size
        while len(self._residual_keys) > self.config.residual_length and len(self._residual_keys) >= g:
            self._flush_oldest_group(g)

    def _flush_oldest_group(self, g: int) -> None:
        k_rows = np.vstack(self._residual_keys[:g])
        v_rows = np.vstack(self._residual_values[:g])
        self._key_blocks.append(_make_block(k_rows, self.config.key_spec))
        self._value_blocks.append(_make_block(v_rows, self.config.value_spec))
        del self._residual_keys[:g]
        del self._residual_values[:g]

    def materialize(self, which: str) -> np.ndarray:
        """Full t x h matrix: reconstructed history rows in append order,
        followed by the exact residual rows."""
        if self.token_count == 0:
            raise StateError("cannot materialize an empty cache")
        if which == "keys":
            blocks, residual = self._key_blocks, self._residual_keys
        elif which == "values":
            blocks, residual = self._value_blocks, self._residual_values
        else:
            raise ValueError(f"which must be 'keys' or 'values', got {which!r}")
        parts = [b.rows for b in blocks]
        if residual:
            parts.append(np.vstack(residual))
        return np.concatenate(parts, axis=0)


def _make_block(rows: np.ndarray, spec: QuantSpec) -> _Block:
    if spec.is_passthrough:
        return _Block(None, rows)
    q = quantize(rows, spec)
    return _Block(q, dequantize(q))
