"""Single-head decoder attention over exact or cache-backed histories.

The toy model is a stack of single-head attention layers joined by residual
additions, with no feed-forward or normalization sublayers: the attention
path is the whole mechanism under study, and extra sublayers would only
dilute it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .kvcache import LayerKVCache
from .numerics import Rng, as_matrix, matmul, softmax_rows

__all__ = [
    "attention_step",
    "quantized_attention_step",
    "DecoderLayer",
    "ToyModel",
    "decode_token",
]


def attention_step(x_q, keys, values) -> np.ndarray:
    """softmax(x_q K^T / sqrt(h)) V for a single query row."""
    x_q = as_matrix(x_q)
    keys = as_matrix(keys)
    values = as_matrix(values)
    h = x_q.shape[1]
    if x_q.shape[0] != 1:
        raise ShapeError(f"query must be a single row, got {x_q.shape}")
    if keys.shape != values.shape or keys.shape[1] != h or keys.shape[0] < 1:
        raise ShapeError(
            f"keys {keys.shape} and values {values.shape} must be t x {h} with t >= 1"
        )
    logits = matmul(x_q, keys.T) / math.sqrt(h)
    return matmul(softmax_rows(logits), values)


def quantized_attention_step(x_q, cache: LayerKVCache) -> np.ndarray:
    """attention_step over the cache's materialized key/value history."""
    return attention_step(x_q, cache.materialize("keys"), cache.materialize("values"))


@dataclass(frozen=True)
class DecoderLayer:
    """Query/key/value projection weights for one single-head layer."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    layer_index: int


@dataclass(frozen=True)
class ToyModel:
    layers: tuple[DecoderLayer, ...]
    head_dim: int
    seed: int

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @classmethod
    def create(cls, layer_count: int, head_dim: int, seed: int) -> "ToyModel":
        """Seeded model with i.i.d. normal weights of std 1/sqrt(head_dim).

        Weights are drawn in a fixed order (per layer: w_q, w_k, w_v, each
        row-major) so a seed pins the whole model. The 1/sqrt(h) scale keeps
        first-step logits O(1), away from both saturated and uniform softmax.
        """
        if layer_count < 1 or head_dim < 1:
            raise ShapeError("layer_count and head_dim must be positive")
        rng = Rng(seed)
        scale = 1.0 / math.sqrt(head_dim)
        layers = []
        for i in range(layer_count):
            w_q = rng.matrix(head_dim, head_dim) * scale
            w_k = rng.matrix(head_dim, head_dim) * scale
            w_v = rng.matrix(head_dim, head_dim) * scale
            layers.append(DecoderLayer(w_q, w_k, w_v, layer_index=i))
        return cls(layers=tuple(layers), head_dim=head_dim, seed=seed)


def decode_token(model: ToyModel, hidden, caches) -> np.ndarray:
    """Run one token through every layer, updating the caches in place.

    Per layer: project the incoming hidden row to x_q/x_k/x_v, append
    (x_k, x_v) to that layer's cache, then add the attention output over the
    cached history back into the hidden row (residual connection). Returns
    the final hidden row.
    """
    hidden = as_matrix(hidden)
    if len(caches) != model.layer_count:
        raise ShapeError(f"got {len(caches)} caches for {model.layer_count} layers")
    if hidden.shape != (1, model.head_dim):
        raise ShapeError(f"hidden must be 1x{model.head_dim}, got {hidden.shape}")
    for layer, cache in zip(model.layers, caches):
        x_q = matmul(hidden, layer.w_q)
        x_k = matmul(hidden, layer.w_k)
        x_v = matmul(hidden, layer.w_v)
        cache.append_token(x_k, x_v)
        hidden = hidden + quantized_attention_step(x_q, cache)
    return hidden
