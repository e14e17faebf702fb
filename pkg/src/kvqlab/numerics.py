"""Deterministic dense linear algebra, metrics, and seeded randomness.

All operations work on 2-D float64 arrays. Arithmetic stays in 64-bit
precision with a pinned accumulation order, so results are reproducible
bit-for-bit across platforms regardless of the local BLAS.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

__all__ = ["as_matrix", "matmul", "softmax_rows", "mse", "Rng", "derive_seed"]


def as_matrix(values) -> np.ndarray:
    """Coerce input to a 2-D float64 array whose elements are all finite.

    A 1-D sequence is treated as a single row. Raises ShapeError for other
    ranks and ValueError if any element is NaN or infinite.
    """
    m = np.asarray(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {m.ndim} dimensions")
    if m.size and not np.isfinite(m).all():
        raise ValueError("matrix contains NaN or Inf")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with row-major, left-to-right accumulation.

    The fold over the inner dimension is explicit, so every element is
    accumulated in exactly the order of the naive triple loop and the result
    does not depend on the BLAS backing numpy.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k]
    return out


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability."""
    m = as_matrix(m)
    if m.shape[1] == 0:
        raise ShapeError("softmax of zero-width rows")
    e = np.exp(m - m.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def mse(a, b) -> float:
    """Mean squared element difference (average over all elements)."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("mse of empty matrices")
    d = a - b
    return float(np.mean(d * d))


_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_STREAM_SALT = 0x632BE59BD9B4E019


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over a uint64 array (wrapping arithmetic)."""
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(_MIX1)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


def derive_seed(seed: int, stream: int) -> int:
    """Deterministic child seed for an independent, numbered stream."""
    v = (int(seed) + _STREAM_SALT * (int(stream) + 1)) & _MASK64
    return int(_mix64(np.array([v], dtype=np.uint64))[0])


class Rng:
    """Counter-based splitmix64 stream.

    Draw number i of a stream seeded with s is the splitmix64 finalizer
    applied to s + (i + 1) * GAMMA (mod 2**64), so an identical seed yields
    an identical sample stream on every platform. Uniforms take the top 53
    bits of a draw; standard normals use the Box-Muller transform and
    consume exactly two draws per sample, independent of call chunking.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._count = 0

    def raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit draws as a uint64 array."""
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        return _mix64(np.uint64(self.seed) + idx * np.uint64(_GAMMA))

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in (0, 1]."""
        return ((self.raw(n) >> np.uint64(11)) + np.uint64(1)) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """n standard normal samples (Box-Muller, cosine branch only)."""
        u = self.uniform(2 * n).reshape(n, 2)
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        return r * np.cos(2.0 * math.pi * u[:, 1])

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        """rows x cols standard-normal matrix, filled row-major."""
        return self.normal(rows * cols).reshape(rows, cols)
