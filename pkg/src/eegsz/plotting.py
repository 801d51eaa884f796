"""Report figures: training accuracy by epoch, and accuracy per band / electrode set."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
FIG_SIZE = (5.0, 3.2)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def mean_curve(curves, key="train_acc"):
    """Fold-averaged curve truncated to the shortest fold."""
    series = [c[key] for c in curves if c.get(key)]
    if not series:
        return np.array([])
    n = min(len(s) for s in series)
    return np.mean([s[:n] for s in series], axis=0)


def plot_training_curves(reports, path):
    """Fold-mean training accuracy by epoch, one line per condition."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIG_SIZE)
        drawn = 0
        for r in reports:
            acc = mean_curve(r.curves)
            if acc.size:
                ax.plot(np.arange(1, acc.size + 1), 100.0 * acc, lw=1.2, label=r.label)
                drawn += 1
        ax.set_xlabel("Epoch")
        ax.set_ylabel("Training accuracy (%)")
        ax.set_ylim(0, 102)
        if drawn:
            ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_accuracy_bars(reports, factor, path):
    """Grouped bars of mean accuracy: groups are ``factor`` levels, bars are models."""
    from .eval import accuracy_table

    rows, cols, table = accuracy_table(reports, "model", factor)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIG_SIZE)
        width = 0.8 / max(len(rows), 1)
        x = np.arange(len(cols))
        for i, model in enumerate(rows):
            ax.bar(x + (i - (len(rows) - 1) / 2) * width, 100.0 * np.nan_to_num(table[i]),
                   width, label=model.upper())
        ax.set_xticks(x)
        ax.set_xticklabels([str(c) for c in cols])
        ax.set_ylabel("Mean accuracy (%)")
        ax.set_ylim(0, 105)
        ax.axhline(50.0, color="0.5", lw=0.8, ls="--")
        ax.legend(frameon=False, ncol=max(len(rows), 1), loc="upper left")
        return _save(fig, path)


def render_report_figures(reports, out_dir):
    out_dir = Path(out_dir)
    written = []
    if any(r.curves and r.curves[0].get("train_acc") for r in reports):
        written.append(plot_training_curves(reports, out_dir / "training_accuracy.png"))
    if len({r.band for r in reports}) > 1:
        written.append(plot_accuracy_bars(reports, "band", out_dir / "band_accuracy.png"))
    electrode_reports = [r for r in reports if r.electrode_set]
    if electrode_reports:
        written.append(plot_accuracy_bars(electrode_reports, "electrode_set",
                                          out_dir / "electrode_accuracy.png"))
    return written
