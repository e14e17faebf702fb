"""Staged error measurement and closed-form attention error propagation.

Key and value quantization reach the attention output through different
routes: value error passes linearly through the attention-weight average,
while key error enters the softmax exponent and multiplicatively
redistributes the weights. The closed forms here compute both output errors
directly; two-run brute-force differences serve as the independent oracle in
the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import Rng, as_matrix, matmul, mse, softmax_rows
from .quantizer import QuantSpec, dequantize, quantize

__all__ = [
    "STAGES",
    "SOURCES",
    "StagedErrorReport",
    "KeyErrorTerms",
    "key_error_terms",
    "propagate_error",
    "value_error_closed_form",
    "attention_weight_error",
    "key_error_closed_form",
    "staged_errors",
    "AsymmetrySummary",
    "asymmetry_experiment",
]

STAGES = ("dequant", "qk", "softmax", "output")
SOURCES = ("key", "value")


@dataclass(frozen=True)
class StagedErrorReport:
    """MSE between the quantized and float paths at each attention stage.

    For the value source the qk and softmax stages are recorded as 0: value
    error first enters at the output stage.
    """

    source: str
    mse_after_dequant: float
    mse_after_qk: float
    mse_after_softmax: float
    mse_after_output: float

    def by_stage(self) -> dict[str, float]:
        return {
            "dequant": self.mse_after_dequant,
            "qk": self.mse_after_qk,
            "softmax": self.mse_after_softmax,
            "output": self.mse_after_output,
        }


@dataclass(frozen=True)
class KeyErrorTerms:
    """Terms of the closed-form key-quantization error.

    e_k is the raw error keys - keys_star. e_q is the query-projected row
    x_q (keys_star - keys)^T: the sign is chosen so that the exponent
    identity below holds exactly (the weight error is
    weights * (1 - sr * exp(e_q / sqrt(h)))). sft and sft_star are the
    softmax denominators under the exact and quantized keys, sr their ratio.
    """

    e_k: np.ndarray
    e_q: np.ndarray
    sft: float
    sft_star: float
    sr: float


def _log_sum_exp(row: np.ndarray) -> float:
    m = float(row.max())
    return m + math.log(float(np.sum(np.exp(row - m))))


def key_error_terms(x_q, keys, keys_star) -> KeyErrorTerms:
    """Compute the closed-form terms for a (keys, keys_star) pair.

    The denominators are evaluated through log-sum-exp so sr stays finite
    for any finite logits.
    """
    x_q = as_matrix(x_q)
    keys = as_matrix(keys)
    keys_star = as_matrix(keys_star)
    if keys.shape != keys_star.shape or keys.shape[1] != x_q.shape[1]:
        raise ShapeError(
            f"keys {keys.shape}, keys_star {keys_star.shape} and query {x_q.shape} disagree"
        )
    scale = math.sqrt(x_q.shape[1])
    logits = matmul(x_q, keys.T) / scale
    logits_star = matmul(x_q, keys_star.T) / scale
    log_sft = _log_sum_exp(logits[0])
    log_sft_star = _log_sum_exp(logits_star[0])
    return KeyErrorTerms(
        e_k=keys - keys_star,
        e_q=matmul(x_q, (keys_star - keys).T),
        sft=math.exp(log_sft),
        sft_star=math.exp(log_sft_star),
        sr=math.exp(log_sft - log_sft_star),
    )


def propagate_error(a, e, side: str) -> np.ndarray:
    """Error matrix after multiplication: a @ e for side='left' (a applied on
    the left of the perturbed matrix), e @ a for side='right'."""
    if side == "left":
        return matmul(a, e)
    if side == "right":
        return matmul(e, a)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def value_error_closed_form(a_w, e_v) -> np.ndarray:
    """Attention-output error from value quantization: a_w @ e_v."""
    return matmul(a_w, e_v)


def attention_weight_error(x_q, keys, keys_star) -> np.ndarray:
    """Per-token attention-weight error row caused by replacing keys with
    keys_star: weights * (1 - sr * exp(e_q / sqrt(h)))."""
    x_q = as_matrix(x_q)
    terms = key_error_terms(x_q, keys, keys_star)
    h = x_q.shape[1]
    logits = matmul(x_q, as_matrix(keys).T) / math.sqrt(h)
    weights = softmax_rows(logits)
    return weights * (1.0 - terms.sr * np.exp(terms.e_q / math.sqrt(h)))


def key_error_closed_form(x_q, keys, keys_star, values) -> np.ndarray:
    """Attention-output error from key quantization.

    Equals attention_step(x_q, keys, values) minus
    attention_step(x_q, keys_star, values) up to float rounding.
    """
    return matmul(attention_weight_error(x_q, keys, keys_star), values)


def staged_errors(x_q, keys, values, spec: QuantSpec, source: str) -> StagedErrorReport:
    """Quantize only the source matrix and record the MSE against the float
    path after the dequantization, score, softmax, and output stages."""
    if source not in SOURCES:
        raise ValueError(f"source must be one of {SOURCES}, got {source!r}")
    x_q = as_matrix(x_q)
    keys = as_matrix(keys)
    values = as_matrix(values)
    if spec.is_passthrough:
        return StagedErrorReport(source, 0.0, 0.0, 0.0, 0.0)
    h = x_q.shape[1]
    scale = math.sqrt(h)
    logits = matmul(x_q, keys.T) / scale
    weights = softmax_rows(logits)
    output = matmul(weights, values)
    if source == "key":
        keys_star = dequantize(quantize(keys, spec))
        logits_star = matmul(x_q, keys_star.T) / scale
        weights_star = softmax_rows(logits_star)
        return StagedErrorReport(
            source="key",
            mse_after_dequant=mse(keys, keys_star),
            mse_after_qk=mse(logits, logits_star),
            mse_after_softmax=mse(weights, weights_star),
            mse_after_output=mse(output, matmul(weights_star, values)),
        )
    values_star = dequantize(quantize(values, spec))
    return StagedErrorReport(
        source="value",
        mse_after_dequant=mse(values, values_star),
        mse_after_qk=0.0,
        mse_after_softmax=0.0,
        mse_after_output=mse(output, matmul(weights, values_star)),
    )


@dataclass(frozen=True)
class AsymmetrySummary:
    """Aggregate of staged errors over seeded random attention instances.

    mean_mse maps source -> stage -> mean MSE; ratios maps stage -> ratio of
    the key mean over the value mean (nan when both are zero, inf when only
    the value mean is zero). The sample arrays hold the per-element
    closed-form output errors from every trial, for scatter/histogram
    reporting.
    """

    trials: int
    t: int
    h: int
    spec: QuantSpec
    seed: int
    mean_mse: dict[str, dict[str, float]]
    ratios: dict[str, float]
    key_error_samples: np.ndarray
    value_error_samples: np.ndarray


def _ratio(key_mean: float, value_mean: float) -> float:
    if key_mean == 0.0 and value_mean == 0.0:
        return math.nan
    if value_mean == 0.0:
        return math.inf
    return key_mean / value_mean


def asymmetry_experiment(trials: int, t: int, h: int, spec: QuantSpec, seed: int) -> AsymmetrySummary:
    """Measure the key/value error asymmetry over seeded random instances.

    Trial i draws keys (t x h), values (t x h), and the query row from
    Rng(seed + i), in that order. Both sources are quantized with the same
    spec, so the measured gap isolates the propagation route rather than the
    grouping scheme. Means use compensated summation, so the aggregate does
    not depend on trial execution order.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    per_stage: dict[str, dict[str, list[float]]] = {
        source: {stage: [] for stage in STAGES} for source in SOURCES
    }
    key_samples: list[np.ndarray] = []
    value_samples: list[np.ndarray] = []
    scale = math.sqrt(h)
    for i in range(trials):
        rng = Rng(seed + i)
        keys = rng.matrix(t, h)
        values = rng.matrix(t, h)
        x_q = rng.matrix(1, h)
        if spec.is_passthrough:
            for source in SOURCES:
                for stage in STAGES:
                    per_stage[source][stage].append(0.0)
            continue
        # One quantization per source feeds both the staged MSEs and the
        # closed-form sample rows.
        keys_star = dequantize(quantize(keys, spec))
        values_star = dequantize(quantize(values, spec))
        logits = matmul(x_q, keys.T) / scale
        logits_star = matmul(x_q, keys_star.T) / scale
        weights = softmax_rows(logits)
        weights_star = softmax_rows(logits_star)
        output = matmul(weights, values)
        for stage, value in (
            ("dequant", mse(keys, keys_star)),
            ("qk", mse(logits, logits_star)),
            ("softmax", mse(weights, weights_star)),
            ("output", mse(output, matmul(weights_star, values))),
        ):
            per_stage["key"][stage].append(value)
        for stage, value in (
            ("dequant", mse(values, values_star)),
            ("qk", 0.0),
            ("softmax", 0.0),
            ("output", mse(output, matmul(weights, values_star))),
        ):
            per_stage["value"][stage].append(value)
        sr = math.exp(_log_sum_exp(logits[0]) - _log_sum_exp(logits_star[0]))
        e_q = matmul(x_q, (keys_star - keys).T)
        weight_error = weights * (1.0 - sr * np.exp(e_q / scale))
        key_samples.append(matmul(weight_error, values)[0])
        value_samples.append(value_error_closed_form(weights, values - values_star)[0])
    mean_mse = {
        source: {stage: math.fsum(vals) / trials for stage, vals in stages.items()}
        for source, stages in per_stage.items()
    }
    ratios = {stage: _ratio(mean_mse["key"][stage], mean_mse["value"][stage]) for stage in STAGES}
    return AsymmetrySummary(
        trials=trials,
        t=t,
        h=h,
        spec=spec,
        seed=seed,
        mean_mse=mean_mse,
        ratios=ratios,
        key_error_samples=np.concatenate(key_samples) if key_samples else np.zeros(0),
        value_error_samples=np.concatenate(value_samples) if value_samples else np.zeros(0),
    )
