"""Figure rendering for evaluation reports.

Everything here draws to files through the Agg backend so the report
path works on headless machines. Each function takes already-computed
numbers (bin tables, per-seed metric rows, rejection sweeps) and returns
the written path; no metric is recomputed during plotting.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_METHOD_COLOURS = {
    "evidential": "#1b6ca8",
    "l2": "#888888",
    "mcdp": "#5d9c59",
    "bbb": "#b1740f",
    "ensemble": "#a44a3f",
}


def _colour(method):
    return _METHOD_COLOURS.get(method, "#333333")


def plot_reliability(path, method, raw_bins, mapped_bins):
    """Side-by-side reliability diagrams before and after confidence mapping.

    Each bins argument is a list of (mean_confidence, accuracy, count)
    triples as produced by ``metrics.reliability_bins``.
    """
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.6), sharey=True)
    for ax, bins, title in zip(axes, (raw_bins, mapped_bins), ("raw", "calibrated")):
        ax.plot([0.0, 1.0], [0.0, 1.0], ls="--", lw=0.8, color="#aaaaaa")
        if bins:
            conf = [b[0] for b in bins]
            acc = [b[1] for b in bins]
            counts = [b[2] for b in bins]
            total = sum(counts) or 1
            sizes = [12.0 + 120.0 * c / total for c in counts]
            ax.scatter(conf, acc, s=sizes, color=_colour(method), zorder=3)
            ax.plot(conf, acc, lw=1.0, color=_colour(method), alpha=0.6)
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(0.0, 1.0)
        ax.set_xlabel("mean confidence")
        ax.set_title(f"{method} ({title})")
    axes[0].set_ylabel("accuracy")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metric_bars(path, metric, summary):
    """Bar chart of one metric across methods with standard-error whiskers.

    summary maps method name to (mean, stderr); stderr may be nan when a
    single seed was run, in which case no whisker is drawn.
    """
    methods = list(summary)
    means = [summary[m][0] for m in methods]
    errs = [0.0 if math.isnan(summary[m][1]) else summary[m][1] for m in methods]
    colours = [_colour(m) for m in methods]
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(methods), 3.2))
    ax.bar(range(len(methods)), means, yerr=errs, capsize=3.0, color=colours)
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(methods, rotation=20.0, ha="right")
    ax.set_ylabel(metric)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_reject_curves(path, curves):
    """Accuracy against confidence threshold for each (method, variant).

    curves maps (method, variant) to a list of RejectPoint objects; the
    calibrated variant is drawn dashed.
    """
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for (method, variant), points in sorted(curves.items()):
        xs = [p.threshold for p in points]
        ys = [p.accuracy for p in points]
        style = "--" if variant == "pwlm" else "-"
        ax.plot(
            xs,
            ys,
            style,
            marker="o",
            ms=3.0,
            lw=1.2,
            color=_colour(method),
            label=f"{method} ({variant})",
        )
    ax.set_xlabel("confidence threshold")
    ax.set_ylabel("accuracy on retained examples")
    ax.set_ylim(0.0, 1.02)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
