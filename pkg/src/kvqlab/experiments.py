"""Experiment configuration and end-to-end generation runs.

A run feeds seeded Gaussian embeddings through the toy model for the prompt,
then feeds the hidden state forward for the generation steps. Quality is the
hidden-state MSE against an uncached full-precision reference run: the
uncached path rebuilds the key/value history with plain arrays, so it shares
no code with the cache module and doubles as the passthrough-equivalence
oracle.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import ToyModel, attention_step, decode_token
from .errors import ConfigError
from .kvcache import CacheConfig, LayerKVCache
from .numerics import Rng, derive_seed, matmul, mse
from .policy import AsymConfig, ModelShape, bits_for_layer, estimate_memory, validate_config
from .quantizer import Axis, QuantSpec

__all__ = [
    "ExperimentConfig",
    "GenerationResult",
    "SweepRow",
    "run_generation",
    "run_sweep",
    "reference_decode",
]

_WEIGHT_STREAM = 0
_EMBED_STREAM = 1


def _unit_rms(row: np.ndarray) -> np.ndarray:
    """Scale a hidden row to unit RMS before feeding it back as the next
    token's embedding.

    A real greedy step would look up an O(1) embedding for the selected
    token; feeding the raw hidden row forward instead lets its norm compound
    through the residual additions until the softmax saturates, which buries
    the error path under study. Rescaling the fed-back row keeps logits O(1)
    across the whole run while leaving the per-layer computation untouched.
    """
    scale = math.sqrt(float(np.mean(row * row)))
    return row / scale


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale experiment parameters.

    The defaults complete in seconds while still exercising group flushes,
    both grouping axes, and multi-layer error accumulation.
    """

    seed: int = 0
    layer_count: int = 8
    head_dim: int = 32
    prompt_len: int = 16
    gen_len: int = 64
    group_size: int = 8
    residual_length: int = 8
    l_k: int = 8
    l_v: int = 0
    high_bits: int = 2
    low_bits: int = 1
    trials: int = 20
    passthrough: bool = False

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in raw.items():
            if key == "passthrough":
                if not isinstance(value, bool):
                    raise ConfigError(f"config key {key!r} must be a boolean, got {value!r}")
            elif not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def overridden(self, **changes) -> "ExperimentConfig":
        """Copy with the given fields replaced (None values are ignored)."""
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def asym(self) -> AsymConfig:
        return AsymConfig(
            l_k=self.l_k,
            l_v=self.l_v,
            high_bits=self.high_bits,
            low_bits=self.low_bits,
            layer_count=self.layer_count,
        )

    def shape(self) -> ModelShape:
        return ModelShape(
            layer_count=self.layer_count,
            h_total=self.head_dim,
            group_size=self.group_size,
            residual_length=self.residual_length,
        )

    def validate(self) -> list[str]:
        """Raise ConfigError on hard violations; return advisory warnings."""
        for name in ("seed", "trials", "prompt_len", "gen_len"):
            value = getattr(self, name)
            if value < 1 and name != "seed":
                raise ConfigError(f"{name} must be >= 1, got {value}")
            if name == "seed" and value < 0:
                raise ConfigError(f"seed must be non-negative, got {value}")
        self.cache_config(0)
        if self.passthrough:
            return []
        return validate_config(self.asym())

    def cache_config(self, layer_index: int) -> CacheConfig:
        if self.passthrough:
            key_bits: int | None = None
            value_bits: int | None = None
        else:
            asym = self.asym()
            key_bits = bits_for_layer(asym, layer_index, "key")
            value_bits = bits_for_layer(asym, layer_index, "value")
        return CacheConfig(
            key_spec=QuantSpec(key_bits, Axis.PER_CHANNEL, self.group_size),
            value_spec=QuantSpec(value_bits, Axis.PER_TOKEN, self.group_size),
            residual_length=self.residual_length,
            head_dim=self.head_dim,
        )


@dataclass(frozen=True)
class GenerationResult:
    """Hidden-state MSE of the cached run against the reference, per
    generation step."""

    per_step_mse: tuple[float, ...]

    @property
    def final_mse(self) -> float:
        return self.per_step_mse[-1]


@dataclass(frozen=True)
class SweepRow:
    l_k: int
    l_v: int
    total_bytes: int
    mean_mse: float


def _embeddings(config: ExperimentConfig, seed: int) -> list[np.ndarray]:
    rng = Rng(derive_seed(seed, _EMBED_STREAM))
    return [rng.matrix(1, config.head_dim) for _ in range(config.prompt_len)]


def _model(config: ExperimentConfig, seed: int) -> ToyModel:
    return ToyModel.create(config.layer_count, config.head_dim, derive_seed(seed, _WEIGHT_STREAM))


def cached_decode(model: ToyModel, config: ExperimentConfig, embeddings) -> list[np.ndarray]:
    """Prompt then generation through per-layer caches; returns the hidden
    row after each generation step."""
    caches = [LayerKVCache(config.cache_config(i)) for i in range(config.layer_count)]
    hidden = None
    for row in embeddings:
        hidden = decode_token(model, row, caches)
    steps = []
    for _ in range(config.gen_len):
        hidden = decode_token(model, _unit_rms(hidden), caches)
        steps.append(hidden)
    return steps


def reference_decode(model: ToyModel, embeddings, gen_len: int) -> list[np.ndarray]:
    """Uncached full-precision run over plain per-layer key/value arrays."""
    key_rows: list[list[np.ndarray]] = [[] for _ in model.layers]
    value_rows: list[list[np.ndarray]] = [[] for _ in model.layers]

    def step(hidden: np.ndarray) -> np.ndarray:
        for i, layer in enumerate(model.layers):
            x_q = matmul(hidden, layer.w_q)
            x_k = matmul(hidden, layer.w_k)
            x_v = matmul(hidden, layer.w_v)
            key_rows[i].append(x_k[0])
            value_rows[i].append(x_v[0])
            hidden = hidden + attention_step(x_q, np.vstack(key_rows[i]), np.vstack(value_rows[i]))
        return hidden

    hidden = None
    for row in embeddings:
        hidden = step(row)
    steps = []
    for _ in range(gen_len):
        hidden = step(_unit_rms(hidden))
        steps.append(hidden)
    return steps


def run_generation(config: ExperimentConfig, seed: int | None = None) -> GenerationResult:
    """One quantized run against one reference run with shared weights and
    embeddings; returns the per-step hidden-state MSE."""
    seed = config.seed if seed is None else seed
    model = _model(config, seed)
    embeddings = _embeddings(config, seed)
    reference = reference_decode(model, embeddings, config.gen_len)
    cached = cached_decode(model, config, embeddings)
    return GenerationResult(tuple(mse(a, b) for a, b in zip(cached, reference)))


def run_sweep(config: ExperimentConfig, points: list[tuple[int, int]]) -> list[SweepRow]:
    """Mean final MSE over config.trials seeds for each (l_k, l_v) point.

    The reference run is shared across points within a seed; the memory
    column is the analytic estimate at prompt_len + gen_len cached tokens.
    """
    finals: dict[tuple[int, int], list[float]] = {p: [] for p in points}
    for trial in range(config.trials):
        seed = config.seed + trial
        model = _model(config, seed)
        embeddings = _embeddings(config, seed)
        reference = reference_decode(model, embeddings, config.gen_len)
        for l_k, l_v in points:
            point_config = config.overridden(l_k=l_k, l_v=l_v)
            cached = cached_decode(model, point_config, embeddings)
            finals[(l_k, l_v)].append(mse(cached[-1], reference[-1]))
    tokens = config.prompt_len + config.gen_len
    rows = []
    for l_k, l_v in points:
        point_config = config.overridden(l_k=l_k, l_v=l_v)
        estimate = estimate_memory(point_config.shape(), point_config.asym(), tokens)
        rows.append(
            SweepRow(
                l_k=l_k,
                l_v=l_v,
                total_bytes=estimate.total_bytes,
                mean_mse=math.fsum(finals[(l_k, l_v)]) / config.trials,
            )
        )
    return rows
