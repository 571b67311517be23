"""Matplotlib renderings written alongside the CSV/PPM outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE = {"dpi": 110, "metadata": {"Software": None}}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def curve_figure(log_rows, metric, path, title=""):
    """Training-log curve; one line per split."""
    fig, ax = plt.subplots(figsize=(6, 4))
    splits = sorted({r[1] for r in log_rows if r[2] == metric})
    for split in splits:
        pts = [(int(r[0]), float(r[3])) for r in log_rows if r[1] == split and r[2] == metric]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=split)
    ax.set_xlabel("iteration")
    ax.set_ylabel(metric)
    ax.set_title(title or metric)
    if splits:
        ax.legend()
    _save(fig, path)


def trace_figure(objectives, activations, path, title=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(objectives, label="objective")
    ax.plot(activations, label="activation")
    ax.set_xlabel("iteration")
    ax.set_title(title or "optimization trace")
    ax.legend()
    _save(fig, path)


def image_grid_figure(images, path, titles=None, cols=None):
    n = len(images)
    cols = cols or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.6 * rows), squeeze=False)
    for i, ax in enumerate(axes.flat):
        ax.axis("off")
        if i < n:
            im = np.clip(np.asarray(images[i]), 0, 1).transpose(1, 2, 0)
            ax.imshow(im if im.shape[2] == 3 else im[:, :, 0], cmap=None if im.shape[2] == 3 else "gray")
            if titles:
                ax.set_title(str(titles[i]), fontsize=7)
    _save(fig, path)


def group_box_figure(values_a, values_b, metric, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.boxplot([values_a, values_b], tick_labels=["regular", "modified"])
    ax.set_ylabel(metric)
    _save(fig, path)


def scatter_figure(xs, ys, xlabel, ylabel, path, logx=False):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(xs, ys, s=14)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    _save(fig, path)


def hist_figure(values, xlabel, path, bins=20):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist([v for v in values if np.isfinite(v)], bins=bins)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    _save(fig, path)
