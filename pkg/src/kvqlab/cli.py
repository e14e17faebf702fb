"""Command-line harness: seeded experiment runs, file I/O, and CSV reports.

Subcommands: quantize, theorem-check, asymmetry, generate, sweep, memory.
Every command is deterministic for a fixed seed and writes byte-identical
output files across runs. Exit status: 0 success, 1 validation error,
2 oracle/tolerance failure. Commands that write CSV accept --plot to render
a figure next to the delimited output.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, KvqError
from .error_analysis import (
    STAGES,
    asymmetry_experiment,
    key_error_closed_form,
    value_error_closed_form,
)
from .attention import attention_step
from .experiments import ExperimentConfig, run_generation, run_sweep
from .numerics import Rng, softmax_rows, matmul
from .policy import ALLOWED_BITS, ModelShape, memory_sweep
from .quantizer import Axis, QuantSpec, dequantize, quantize

PRESETS = {
    "llama7b": {"layer_count": 32, "h_total": 4096},
    "llama13b": {"layer_count": 40, "h_total": 5120},
}


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="ascii", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _parse_bits(text: str):
    if text == "none":
        return None
    try:
        bits = int(text)
    except ValueError:
        raise ValueError(f"bits must be an integer or 'none', got {text!r}")
    if bits not in ALLOWED_BITS:
        raise ValueError(f"bits must be one of {ALLOWED_BITS} or 'none', got {bits}")
    return bits


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from exc


def cmd_quantize(args) -> int:
    m = io.read_tensor(args.input)
    spec = QuantSpec(bits=args.bits, axis=Axis(args.axis), group_size=args.group_size)
    q = quantize(m, spec)
    io.write_quantized(args.out, q)
    err = m - dequantize(q)
    print(
        f"rows={q.rows} cols={q.cols} bits={spec.bits} axis={spec.axis.value} "
        f"group_size={spec.group_size} groups={q.group_count}"
    )
    print(f"max_abs_error={_fmt(float(np.max(np.abs(err))))}")
    print(f"mse={_fmt(float(np.mean(err * err)))}")
    return 0


def _check_key_instance(x_q, keys, keys_star, values, rtol, atol):
    closed = key_error_closed_form(x_q, keys, keys_star, values)
    direct = attention_step(x_q, keys, values) - attention_step(x_q, keys_star, values)
    deviation = np.abs(closed - direct)
    ok = bool(np.all(deviation <= rtol * np.abs(direct) + atol))
    return float(deviation.max()), ok


def cmd_theorem_check(args) -> int:
    key_rtol, key_atol = 1e-9, 1e-12
    value_atol = 1e-12
    failures = []

    ln3 = math.log(3.0)
    hand_keys = [[0.0], [0.0]]
    hand_keys_star = [[0.0], [ln3]]
    hand_values = [[1.0], [2.0]]
    hand_closed = key_error_closed_form([[1.0]], hand_keys, hand_keys_star, hand_values)
    hand_dev, hand_ok = _check_key_instance(
        [[1.0]], hand_keys, hand_keys_star, hand_values, key_rtol, key_atol
    )
    hand_exact = abs(float(hand_closed[0, 0]) + 0.25)
    print(f"hand instance: closed={_fmt(float(hand_closed[0, 0]))} max_dev={_fmt(hand_dev)}")
    if not hand_ok or hand_exact > 1e-12:
        failures.append("hand instance")

    worst = {"key quantized": 0.0, "key perturbed": 0.0, "value quantized": 0.0}
    for trial in range(args.trials):
        rng = Rng(args.seed + trial)
        keys = rng.matrix(args.t, args.h)
        values = rng.matrix(args.t, args.h)
        x_q = rng.matrix(1, args.h)
        if args.bits is None:
            keys_star = keys
            values_star = values
        else:
            keys_star = dequantize(
                quantize(keys, QuantSpec(args.bits, Axis.PER_CHANNEL, args.t))
            )
            values_star = dequantize(
                quantize(values, QuantSpec(args.bits, Axis.PER_TOKEN, args.h))
            )
        perturbed = keys + 0.1 * rng.matrix(args.t, args.h)

        dev, ok = _check_key_instance(x_q, keys, keys_star, values, key_rtol, key_atol)
        worst["key quantized"] = max(worst["key quantized"], dev)
        if not ok:
            failures.append(f"key quantized (trial {trial})")
        dev, ok = _check_key_instance(x_q, keys, perturbed, values, key_rtol, key_atol)
        worst["key perturbed"] = max(worst["key perturbed"], dev)
        if not ok:
            failures.append(f"key perturbed (trial {trial})")

        weights = softmax_rows(matmul(x_q, keys.T) / math.sqrt(args.h))
        closed = value_error_closed_form(weights, values - values_star)
        direct = attention_step(x_q, keys, values) - attention_step(x_q, keys, values_star)
        dev = float(np.max(np.abs(closed - direct)))
        worst["value quantized"] = max(worst["value quantized"], dev)
        if dev > value_atol:
            failures.append(f"value quantized (trial {trial})")

    for name, dev in worst.items():
        print(f"{name}: max_dev={_fmt(dev)} over {args.trials} trials")
    if failures:
        print(f"FAIL: tolerance exceeded in {len(failures)} check(s): {failures[0]}, ...")
        return 2
    print("PASS: closed forms match the direct differences at tolerance")
    return 0


def cmd_asymmetry(args) -> int:
    spec = QuantSpec(bits=args.bits, axis=Axis.PER_TOKEN, group_size=args.group_size)
    summary = asymmetry_experiment(args.trials, args.t, args.h, spec, args.seed)
    bits_text = "none" if args.bits is None else args.bits
    rows = []
    for source in ("key", "value"):
        for stage in STAGES:
            rows.append(
                (
                    source,
                    stage,
                    summary.mean_mse[source][stage],
                    summary.ratios[stage],
                    args.trials,
                    args.t,
                    args.h,
                    bits_text,
                    args.seed,
                )
            )
    _write_csv(args.out, ["source", "stage", "mean_mse", "ratio", "trials", "t", "h", "bits", "seed"], rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    ratio = summary.ratios["output"]
    print(f"output-stage key/value MSE ratio: {_fmt(ratio)}")
    if args.plot:
        from . import plots

        plots.plot_asymmetry(summary, args.plot)
        print(f"wrote {args.plot}")
    return 0


_CONFIG_OVERRIDES = (
    "seed",
    "layer_count",
    "head_dim",
    "prompt_len",
    "gen_len",
    "group_size",
    "residual_length",
    "l_k",
    "l_v",
    "high_bits",
    "low_bits",
    "trials",
    "passthrough",
)


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    config = config.overridden(**{name: getattr(args, name) for name in _CONFIG_OVERRIDES})
    for warning in config.validate():
        print(f"warning: {warning}", file=sys.stderr)
    return config


def cmd_generate(args) -> int:
    config = _load_config(args)
    result = run_generation(config)
    for step, value in enumerate(result.per_step_mse, start=1):
        print(f"step={step} mse={_fmt(value)}")
    print(f"final_mse={_fmt(result.final_mse)}")
    if args.out:
        _write_csv(args.out, ["step", "mse"], list(enumerate(result.per_step_mse, start=1)))
        print(f"wrote {args.out}")
    if args.plot:
        from . import plots

        plots.plot_generation(result.per_step_mse, args.plot)
        print(f"wrote {args.plot}")
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    L = config.layer_count
    l_k_values = _parse_int_list(args.l_k_values) if args.l_k_values else [0, L // 2, L]
    l_v_values = _parse_int_list(args.l_v_values) if args.l_v_values else [0, L // 2, L]
    for values, name in ((l_k_values, "l_k"), (l_v_values, "l_v")):
        for value in values:
            if not 0 <= value <= L:
                raise ConfigError(f"{name} value {value} outside [0, {L}]")
    points = []
    for l_k in l_k_values:
        for l_v in l_v_values:
            if (l_k, l_v) not in points:
                points.append((l_k, l_v))
    rows = run_sweep(config, points)
    _write_csv(
        args.out,
        ["l_k", "l_v", "total_bytes", "mean_mse"],
        [(r.l_k, r.l_v, r.total_bytes, r.mean_mse) for r in rows],
    )
    print(f"wrote {args.out} ({len(rows)} rows)")
    if args.plot:
        from . import plots

        plots.plot_sweep(rows, args.plot)
        print(f"wrote {args.plot}")
    return 0


def cmd_memory(args) -> int:
    settings = {
        "layer_count": 8,
        "h_total": 32,
        "group_size": 32,
        "residual_length": 128,
    }
    if args.preset:
        settings.update(PRESETS[args.preset])
    for name in settings:
        value = getattr(args, name)
        if value is not None:
            settings[name] = value
    shape = ModelShape(**settings)
    rows = memory_sweep(shape, args.high_bits, args.low_bits, args.tokens, args.batch)
    _write_csv(
        args.out,
        ["l_k", "l_v", "payload_bytes", "metadata_bytes", "residual_bytes", "total_bytes"],
        [
            (l_k, l_v, e.payload_bytes, e.metadata_bytes, e.residual_bytes, e.total_bytes)
            for l_k, l_v, e in rows
        ],
    )
    print(f"wrote {args.out} ({len(rows)} rows)")
    if args.plot:
        from . import plots

        plots.plot_memory_sweep([(l_k, l_v, e.total_bytes) for l_k, l_v, e in rows], args.plot)
        print(f"wrote {args.plot}")
    return 0


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON experiment config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--layer-count", dest="layer_count", type=int, default=None)
    parser.add_argument("--head-dim", dest="head_dim", type=int, default=None)
    parser.add_argument("--prompt-len", dest="prompt_len", type=int, default=None)
    parser.add_argument("--gen-len", dest="gen_len", type=int, default=None)
    parser.add_argument("--group-size", dest="group_size", type=int, default=None)
    parser.add_argument("--residual-length", dest="residual_length", type=int, default=None)
    parser.add_argument("--l-k", dest="l_k", type=int, default=None)
    parser.add_argument("--l-v", dest="l_v", type=int, default=None)
    parser.add_argument("--high-bits", dest="high_bits", type=int, default=None)
    parser.add_argument("--low-bits", dest="low_bits", type=int, default=None)
    parser.add_argument("--trials", type=int, default=None)
    parser.add_argument(
        "--passthrough",
        action="store_const",
        const=True,
        default=None,
        help="disable quantization (exact float cache)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvqlab",
        description="KV-cache quantization engine and attention error-analysis lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="quantize a tensor file and report error stats")
    p.add_argument("input", type=Path, help="input tensor file")
    p.add_argument("--bits", type=int, required=True, choices=ALLOWED_BITS)
    p.add_argument("--axis", choices=[a.value for a in Axis], default=Axis.PER_TOKEN.value)
    p.add_argument("--group-size", dest="group_size", type=int, default=32)
    p.add_argument("--out", type=Path, required=True, help="quantized dump path")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("theorem-check", help="closed-form vs direct-difference oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--t", type=int, default=16)
    p.add_argument("--h", type=int, default=8)
    p.add_argument("--bits", type=_parse_bits, default=2)
    p.set_defaults(func=cmd_theorem_check)

    p = sub.add_parser("asymmetry", help="staged key/value error experiment (CSV)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--t", type=int, default=64)
    p.add_argument("--h", type=int, default=32)
    p.add_argument("--bits", type=_parse_bits, default=2)
    p.add_argument("--group-size", dest="group_size", type=int, default=32)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plot", type=Path, default=None)
    p.set_defaults(func=cmd_asymmetry)

    p = sub.add_parser("generate", help="end-to-end quantized vs full-precision decode")
    _add_config_overrides(p)
    p.add_argument("--out", type=Path, default=None, help="per-step MSE CSV")
    p.add_argument("--plot", type=Path, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sweep", help="grid of (l_k, l_v) points: memory and mean MSE")
    _add_config_overrides(p)
    p.add_argument("--l-k-values", dest="l_k_values", default=None, help="comma-separated l_k list")
    p.add_argument("--l-v-values", dest="l_v_values", default=None, help="comma-separated l_v list")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plot", type=Path, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("memory", help="analytic memory sweep over the allocation trajectory")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--layer-count", dest="layer_count", type=int, default=None)
    p.add_argument("--h-total", dest="h_total", type=int, default=None)
    p.add_argument("--group-size", dest="group_size", type=int, default=None)
    p.add_argument("--residual-length", dest="residual_length", type=int, default=None)
    p.add_argument("--tokens", type=int, default=4096)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--high-bits", dest="high_bits", type=int, default=2)
    p.add_argument("--low-bits", dest="low_bits", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plot", type=Path, default=None)
    p.set_defaults(func=cmd_memory)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    try:
        return args.func(args)
    except KvqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
