"""Render report figures next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .error_analysis import STAGES, AsymmetrySummary


def plot_asymmetry(summary: AsymmetrySummary, path) -> None:
    """Staged mean MSE per source plus a histogram of output-error samples."""
    fig, (ax_stage, ax_hist) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    x = range(len(STAGES))
    for source, color in (("key", "tab:green"), ("value", "tab:red")):
        y = [summary.mean_mse[source][stage] for stage in STAGES]
        ax_stage.plot(x, y, marker="o", color=color, label=f"{source} quantized")
    ax_stage.set_xticks(list(x), STAGES)
    ax_stage.set_ylabel("mean MSE per element")
    if any(v > 0 for s in summary.mean_mse.values() for v in s.values()):
        ax_stage.set_yscale("log")
    ax_stage.legend()
    ax_stage.set_title(f"staged error, {summary.trials} trials (t={summary.t}, h={summary.h})")
    if summary.key_error_samples.size:
        bins = 60
        ax_hist.hist(summary.key_error_samples, bins=bins, alpha=0.6, color="tab:green", label="key")
        ax_hist.hist(summary.value_error_samples, bins=bins, alpha=0.6, color="tab:red", label="value")
        ax_hist.legend()
    ax_hist.set_xlabel("output error per element")
    ax_hist.set_ylabel("count")
    ax_hist.set_title("closed-form error samples")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_memory_sweep(rows, path) -> None:
    """Total bytes along the two-phase (l_k then l_v) trajectory."""
    totals = [total for _, _, total in rows]
    fig, ax = plt.subplots(figsize=(7.0, 3.6))
    ax.plot(range(len(totals)), totals, marker=".", color="tab:blue")
    phase_split = (len(totals) - 1) // 2
    ax.axvline(phase_split, color="gray", linestyle=":", linewidth=1)
    ax.annotate("all keys high-bit", (phase_split, totals[phase_split]), fontsize=8)
    ax.set_xlabel("sweep position (l_k rises, then l_v)")
    ax.set_ylabel("total bytes")
    ax.set_title("cache memory across the bit-allocation sweep")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_generation(per_step_mse, path) -> None:
    fig, ax = plt.subplots(figsize=(7.0, 3.6))
    steps = range(1, len(per_step_mse) + 1)
    ax.plot(steps, per_step_mse, color="tab:blue")
    if any(v > 0 for v in per_step_mse):
        ax.set_yscale("log")
    ax.set_xlabel("generation step")
    ax.set_ylabel("hidden-state MSE vs reference")
    ax.set_title("end-to-end quantization error")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(rows, path) -> None:
    """Memory/quality trade-off: total bytes against mean final MSE."""
    fig, ax = plt.subplots(figsize=(7.0, 3.6))
    for row in rows:
        ax.scatter(row.total_bytes, row.mean_mse, color="tab:blue")
        ax.annotate(f"{row.l_k}/{row.l_v}", (row.total_bytes, row.mean_mse), fontsize=8)
    if any(row.mean_mse > 0 for row in rows):
        ax.set_yscale("log")
    ax.set_xlabel("total bytes")
    ax.set_ylabel("mean final hidden-state MSE")
    ax.set_title("bit allocation (l_k/l_v): memory vs error")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
