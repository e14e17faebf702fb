"""Layer-wise asymmetric bit allocation and the analytic cache memory model.

The policy gives the first l_k layers high-bit keys and the first l_v layers
high-bit values; every remaining layer/matrix uses the low bit width. Layer
indexing is 0-based, so "first l layers" means indices [0, l).

The memory model is analytic, not measured: it accounts for the quantized
payload, the per-group scale/zero metadata (8 bytes per group), and the
float residual tail of both matrices, and reproduces relative savings rather
than hardware peak-memory figures.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .quantizer import ALLOWED_BITS

__all__ = [
    "AsymConfig",
    "validate_config",
    "bits_for_layer",
    "ModelShape",
    "MemoryEstimate",
    "estimate_memory",
    "memory_sweep",
]


@dataclass(frozen=True)
class AsymConfig:
    """Layer-wise policy: high bits for the first l_k key / l_v value layers."""

    l_k: int
    l_v: int
    high_bits: int
    low_bits: int
    layer_count: int


def validate_config(config: AsymConfig) -> list[str]:
    """Raise ConfigError for hard violations; return advisory warnings.

    A config with l_v > l_k is legal (such configs are worth evaluating) but
    warned against: key error dominates the attention output, so spending
    the high-bit budget on keys is the recommended direction.
    """
    if config.layer_count < 1:
        raise ConfigError(f"layer_count must be positive, got {config.layer_count}")
    for name, value in (("l_k", config.l_k), ("l_v", config.l_v)):
        if not 0 <= value <= config.layer_count:
            raise ConfigError(f"{name}={value} outside [0, {config.layer_count}]")
    for name, bits in (("high_bits", config.high_bits), ("low_bits", config.low_bits)):
        if bits not in ALLOWED_BITS:
            raise ConfigError(f"{name} must be one of {ALLOWED_BITS}, got {bits!r}")
    if config.high_bits <= config.low_bits:
        raise ConfigError(
            f"high_bits ({config.high_bits}) must exceed low_bits ({config.low_bits})"
        )
    warnings = []
    if config.l_v > config.l_k:
        warnings.append(
            f"l_v={config.l_v} exceeds l_k={config.l_k}: key quantization error dominates "
            "the attention output, so a larger l_k is the recommended configuration"
        )
    return warnings


def bits_for_layer(config: AsymConfig, layer_index: int, which: str) -> int:
    """Bit width for one layer's key or value matrix under the policy."""
    if not 0 <= layer_index < config.layer_count:
        raise IndexError(f"layer_index {layer_index} outside [0, {config.layer_count})")
    if which == "key":
        boundary = config.l_k
    elif which == "value":
        boundary = config.l_v
    else:
        raise ValueError(f"which must be 'key' or 'value', got {which!r}")
    return config.high_bits if layer_index < boundary else config.low_bits


@dataclass(frozen=True)
class ModelShape:
    """Memory-accounting inputs: layer count, per-layer cached width, and the
    cache configuration shared by every layer."""

    layer_count: int
    h_total: int
    group_size: int
    residual_length: int
    bytes_per_float: int = 4

    def __post_init__(self):
        if min(self.layer_count, self.h_total, self.group_size, self.bytes_per_float) < 1:
            raise ConfigError("layer_count, h_total, group_size, bytes_per_float must be positive")
        if self.residual_length < 0:
            raise ConfigError(f"residual_length must be non-negative, got {self.residual_length}")


@dataclass(frozen=True)
class MemoryEstimate:
    """KV-cache byte budget split into payload, metadata, and residual."""

    payload_bytes: int
    metadata_bytes: int
    residual_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.payload_bytes + self.metadata_bytes + self.residual_bytes


def estimate_memory(shape: ModelShape, config: AsymConfig, tokens: int, batch: int = 1) -> MemoryEstimate:
    """Analytic cache size after `tokens` cached tokens per sequence.

    Per layer and matrix: the newest residual_length tokens stay in floats;
    the rest hold bits/8 bytes per element plus 8 metadata bytes per group
    of group_size elements (a float32 scale and zero each). Group counts are
    the same along either axis. Totals scale with the batch size.
    """
    validate_config(config)
    if config.layer_count != shape.layer_count:
        raise ConfigError(
            f"policy covers {config.layer_count} layers but shape has {shape.layer_count}"
        )
    if tokens < shape.residual_length:
        raise ConfigError(f"tokens ({tokens}) must be >= residual_length ({shape.residual_length})")
    if batch < 1:
        raise ConfigError(f"batch must be positive, got {batch}")
    quantized_tokens = tokens - shape.residual_length
    cells = quantized_tokens * shape.h_total
    if cells % shape.group_size:
        raise ConfigError(
            f"quantized cells ({cells}) must divide evenly into groups of {shape.group_size}"
        )
    groups = cells // shape.group_size
    payload_bits = 0
    for layer in range(shape.layer_count):
        for which in ("key", "value"):
            payload_bits += cells * bits_for_layer(config, layer, which)
    payload_bits *= batch
    if payload_bits % 8:
        raise ConfigError("payload does not fill whole bytes; use a byte-aligned shape")
    matrices = 2 * shape.layer_count * batch
    return MemoryEstimate(
        payload_bytes=payload_bits // 8,
        metadata_bytes=groups * 8 * matrices,
        residual_bytes=shape.residual_length * shape.h_total * shape.bytes_per_float * matrices,
    )


def memory_sweep(
    shape: ModelShape,
    high_bits: int,
    low_bits: int,
    tokens: int,
    batch: int = 1,
) -> list[tuple[int, int, MemoryEstimate]]:
    """Two-phase trajectory from all-low-bits to all-high-bits.

    Phase one raises l_k from 0 to L with l_v = 0; phase two keeps l_k = L
    and raises l_v from 1 to L. Within each phase consecutive totals differ
    by a constant, which is the linearity the analytic model makes exact.
    """
    L = shape.layer_count
    points = [(l_k, 0) for l_k in range(L + 1)] + [(L, l_v) for l_v in range(1, L + 1)]
    out = []
    for l_k, l_v in points:
        config = AsymConfig(l_k=l_k, l_v=l_v, high_bits=high_bits, low_bits=low_bits, layer_count=L)
        out.append((l_k, l_v, estimate_memory(shape, config, tokens, batch)))
    return out
