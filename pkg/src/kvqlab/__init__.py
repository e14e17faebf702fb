"""KV-cache quantization engine and attention error-analysis lab."""

from .attention import DecoderLayer, ToyModel, attention_step, decode_token, quantized_attention_step
from .error_analysis import (
    AsymmetrySummary,
    KeyErrorTerms,
    StagedErrorReport,
    asymmetry_experiment,
    attention_weight_error,
    key_error_closed_form,
    key_error_terms,
    propagate_error,
    staged_errors,
    value_error_closed_form,
)
from .errors import ConfigError, FormatError, KvqError, ShapeError, SpecError, StateError
from .experiments import ExperimentConfig, GenerationResult, SweepRow, run_generation, run_sweep
from .kvcache import CacheConfig, LayerKVCache
from .numerics import Rng, as_matrix, derive_seed, matmul, mse, softmax_rows
from .policy import (
    AsymConfig,
    MemoryEstimate,
    ModelShape,
    bits_for_layer,
    estimate_memory,
    memory_sweep,
    validate_config,
)
from .quantizer import (
    ALLOWED_BITS,
    Axis,
    QuantizedTensor,
    QuantSpec,
    dequantize,
    pack_codes,
    quant_error,
    quantize,
    unpack_codes,
)

__version__ = "0.1.0"
