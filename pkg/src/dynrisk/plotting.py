"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from dynrisk.domain import DAY  # noqa: E402

REPORT_STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

COLORS = {"dynamic": "tab:blue", "static": "tab:orange", "short": "tab:red", "long": "black"}


def new_figure(width=5.0, aspect=0.75):
    plt.rcParams.update(REPORT_STYLE)
    fig, ax = plt.subplots(figsize=(width, width * aspect))
    return fig, ax


def save(fig, path) -> None:
    # no timestamp in the PNG so reruns produce identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def roc_figure(curves, path, title="ROC on held-out test set", fpr_anchor=None) -> None:
    """``curves``: mapping of model name to :class:`RocCurve`."""
    fig, ax = new_figure()
    for name, c in curves.items():
        ax.plot(c.fpr, c.tpr, color=COLORS.get(name), label=f"{name} (AUC {c.auc:.3f})")
    ax.plot([0, 1], [0, 1], ls=":", color="grey", lw=0.8)
    if fpr_anchor is not None:
        ax.axvline(fpr_anchor, ls="--", color="grey", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right")
    save(fig, path)


def entity_rate_figure(ticks, short, long, path, label, attack_start=None) -> None:
    fig, ax = new_figure(width=6.0, aspect=0.5)
    days = np.asarray(ticks) / DAY
    ax.plot(days, short, color=COLORS["short"], label="short window FR")
    ax.plot(days, long, color=COLORS["long"], label="long window FR")
    if attack_start is not None:
        ax.axvline(attack_start / DAY, ls="--", color="grey", lw=0.8)
    ax.set_xlabel("day")
    ax.set_ylabel("as-of fraud rate")
    ax.set_title(f"Entity fraud rate: {label}")
    ax.legend(loc="upper left")
    save(fig, path)


def degradation_figure(report, path) -> None:
    """Grouped bars of in-time and offline AUC per model."""
    fig, ax = new_figure()
    names = list(report)
    x = np.arange(len(names))
    ax.bar(x - 0.18, [report[n]["auc_in_time"] for n in names], 0.36, label="in-time")
    ax.bar(x + 0.18, [report[n]["auc_offline"] for n in names], 0.36, label="offline")
    ax.set_xticks(x, names)
    lo = min(min(r["auc_in_time"], r["auc_offline"]) for r in report.values())
    ax.set_ylim(max(0.0, lo - 0.1), 1.0)
    ax.set_ylabel("AUC")
    ax.set_title("In-time vs offline AUC")
    ax.legend()
    save(fig, path)
