"""SVG figures for evaluation runs.

Output is byte-stable for identical inputs (fixed SVG id salt, no date
metadata) so figures can be listed in run manifests with checksums.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "kddnet",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_confusion(counts, class_names, path, title: str = "Confusion matrix") -> Path:
    counts = np.asarray(counts)
    k = len(class_names)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 0.75 * k, 1.0 + 0.7 * k))
        # row-normalised colours, raw counts as labels
        rows = counts.sum(axis=1, keepdims=True)
        frac = np.divide(counts, rows, out=np.zeros(counts.shape), where=rows > 0)
        im = ax.imshow(frac, cmap="Blues", vmin=0.0, vmax=1.0)
        for i in range(k):
            for j in range(k):
                ax.text(j, i, str(int(counts[i, j])), ha="center", va="center",
                        color="white" if frac[i, j] > 0.6 else "black")
        ax.set_xticks(range(k), class_names, rotation=45 if k > 2 else 0)
        ax.set_yticks(range(k), class_names)
        ax.set_xlabel("Predicted")
        ax.set_ylabel("True")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="row fraction")
        return _save(fig, path)


def plot_roc(fpr, tpr, auc: float, path, title: str = "ROC curve") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.4))
        ax.plot(fpr, tpr, color="C0", lw=1.5, label=f"AUC = {auc:.4f}")
        ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_learning_curve(epochs, train_loss, val_loss, val_acc, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        ax.plot(epochs, train_loss, label="train loss")
        ax.plot(epochs, val_loss, label="val loss")
        ax.set_xlabel("Epoch")
        ax.set_ylabel("Weighted cross-entropy")
        ax2 = ax.twinx()
        ax2.plot(epochs, val_acc, color="C2", ls=":", label="val accuracy")
        ax2.set_ylabel("Accuracy")
        ax2.spines["right"].set_visible(True)
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], frameon=False, loc="center right")
        return _save(fig, path)
