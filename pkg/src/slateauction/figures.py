"""Figure rendering for the report path.

Every delimited output has a figure sibling: the comparison table becomes a
metrics panel, training report CSVs become loss/reward curves, and the bench
report becomes a latency/pass-count panel. All rendering uses the Agg backend
and writes PNG files next to the CSVs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    path = Path(path)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def _maybe_float(value):
    try:
        return float(value)
    except (TypeError, ValueError):
        return np.nan


def comparison_figure(rows, path):
    """Grouped bars of the headline metrics per mechanism."""
    mechanisms = [row["mechanism"] for row in rows]
    panels = [
        ("rpm", "RPM"),
        ("ctr_percent", "CTR %"),
        ("cvr_percent", "CVR %"),
        ("psi_percent", "IC regret %"),
        ("reward", "objective"),
    ]
    fig, axes = plt.subplots(1, len(panels), figsize=(3.0 * len(panels), 3.2))
    colors = plt.cm.tab10(np.linspace(0, 1, max(3, len(mechanisms))))
    for ax, (key, label) in zip(axes, panels):
        values = [_maybe_float(row.get(key)) for row in rows]
        ax.bar(mechanisms, values, color=colors[: len(mechanisms)])
        ax.set_title(label)
        ax.tick_params(axis="x", rotation=20)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle("Mechanism comparison (ground-truth expected outcomes)")
    fig.tight_layout()
    return _save(fig, path)


def evaluator_training_figure(rows, path):
    """Loss curves and mean regret across scorer training epochs."""
    epochs = [int(float(r["epoch"])) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for key, label in (
        ("loss_pctr", "click loss"),
        ("loss_pcvr", "order loss"),
        ("holdout_pctr", "held-out click loss"),
    ):
        ax1.plot(epochs, [_maybe_float(r.get(key)) for r in rows], marker="o", label=label)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("cross-entropy")
    ax1.legend()
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [_maybe_float(r.get("mean_regret")) for r in rows], marker="o", color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("mean slate regret")
    ax2.grid(alpha=0.3)
    fig.suptitle("Scorer training")
    fig.tight_layout()
    return _save(fig, path)


def generator_training_figure(rows, path):
    """Mean winner reward across allocator training epochs."""
    epochs = [int(float(r["epoch"])) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(epochs, [_maybe_float(r.get("mean_winner_reward")) for r in rows], marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean winner reward")
    ax.grid(alpha=0.3)
    fig.suptitle("Allocator training")
    fig.tight_layout()
    return _save(fig, path)


def latency_figure(report, path):
    """Wall-clock and scoring-pass comparison of the two decode strategies."""
    labels = ["single-pass", "sequential"]
    med = [report["single_pass"]["median_ms"], report["sequential"]["median_ms"]]
    p99 = [report["single_pass"]["p99_ms"], report["sequential"]["p99_ms"]]
    passes = [
        report["single_pass"]["forward_passes_per_request"],
        report["sequential"]["forward_passes_per_request"],
    ]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.4))
    x = np.arange(2)
    ax1.bar(x - 0.2, med, width=0.4, label="median")
    ax1.bar(x + 0.2, p99, width=0.4, label="p99")
    ax1.set_xticks(x, labels)
    ax1.set_ylabel("ms per request")
    ax1.legend()
    ax1.grid(axis="y", alpha=0.3)
    ax2.bar(labels, passes, color=["tab:green", "tab:orange"])
    ax2.set_ylabel("scoring passes per request")
    ax2.grid(axis="y", alpha=0.3)
    fig.suptitle(f"Decode latency, k={report['k']}")
    fig.tight_layout()
    return _save(fig, path)
