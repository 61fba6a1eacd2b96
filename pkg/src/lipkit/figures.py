"""Matplotlib renderers writing report figures next to the delimited outputs."""

from __future__ import annotations

import csv
import io
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport
from .storage import atomic_write_bytes


def _save(fig, path: str | os.PathLike) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def render_confusion(report: EvalReport, path: str | os.PathLike) -> None:
    """Confusion-count heatmap, rows true class, columns predicted."""
    k = len(report.classes)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * k + 2), max(3.5, 0.5 * k + 1.5)))
    im = ax.imshow(report.confusion, cmap="viridis")
    ax.set_xticks(range(k), report.classes, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(k), report.classes, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"top1={report.top1:.3f} over {report.sample_count} samples")
    if k <= 20:
        for i in range(k):
            for j in range(k):
                ax.text(j, i, str(int(report.confusion[i, j])),
                        ha="center", va="center", color="w", fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    _save(fig, path)


def render_per_class(report: EvalReport, path: str | os.PathLike) -> None:
    """Horizontal bar chart of per-class accuracy."""
    names = report.classes
    values = [report.per_class[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, max(2.5, 0.3 * len(names) + 1)))
    ax.barh(range(len(names)), values, color="tab:blue")
    ax.set_yticks(range(len(names)), names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("accuracy")
    ax.set_title("per-class accuracy")
    fig.tight_layout()
    _save(fig, path)


def render_training_curves(metrics_csv: str | os.PathLike, path: str | os.PathLike) -> None:
    """Train loss and test accuracy against epoch, from a metric log CSV."""
    epochs, losses, accs = [], [], []
    with open(metrics_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            epochs.append(int(row["epoch"]))
            losses.append(float(row["train_loss"]))
            accs.append(float(row["test_acc"]))
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(epochs, losses, color="tab:red", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:red")
    ax1.tick_params(axis="y", labelcolor="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, accs, color="tab:blue", label="test accuracy")
    ax2.set_ylabel("test accuracy", color="tab:blue")
    ax2.set_ylim(0, 1.05)
    ax2.tick_params(axis="y", labelcolor="tab:blue")
    fig.tight_layout()
    _save(fig, path)
