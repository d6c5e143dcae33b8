"""Matplotlib figures written next to the evaluation outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PALETTE = np.array([
    [0.85, 0.2, 0.2], [0.2, 0.7, 0.25], [0.25, 0.3, 0.9], [0.9, 0.75, 0.1],
    [0.6, 0.3, 0.7], [0.1, 0.7, 0.7], [0.95, 0.5, 0.2], [0.5, 0.5, 0.5],
])


def plot_boundary_curves(report, path, label: str = "seeds") -> Path:
    """Trimap mIoU and boundary F-measure against band width, side by side."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, name, title in ((axes[0], "trimap", "Trimap mIoU"), (axes[1], "boundary_f", "Boundary F-measure")):
        curve = getattr(report, name)
        widths = sorted(curve)
        ax.plot(widths, [curve[w] for w in widths], marker="o", label=label)
        ax.set_xlabel("band width (px)")
        ax.set_title(title)
        ax.set_ylim(0, 1)
        ax.grid(alpha=0.3)
    axes[1].legend(loc="lower right", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def colorize(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """RGB rendering of a label map; background is black."""
    rgb = np.zeros(labels.shape + (3,))
    for c in range(1, num_classes + 1):
        rgb[labels == c] = PALETTE[(c - 1) % len(PALETTE)]
    return rgb


def plot_seed_panels(samples, seeds, num_classes: int, path, count: int = 6) -> Path:
    """Image / ground truth / seed triplets for the first ``count`` samples."""
    count = min(count, len(samples))
    fig, axes = plt.subplots(count, 3, figsize=(6, 2 * count), squeeze=False)
    for i in range(count):
        panels = (np.moveaxis(samples[i].image.numpy(), 0, -1), colorize(samples[i].gt_mask, num_classes),
                  colorize(seeds[i], num_classes))
        for ax, img, title in zip(axes[i], panels, ("image", "ground truth", "seed")):
            ax.imshow(img, interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_ablation(rows: dict, path) -> Path:
    """Bar chart of mean seed mIoU per configuration with per-seed points."""
    names = list(rows)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for i, name in enumerate(names):
        vals = np.asarray(rows[name])
        ax.bar(i, vals.mean(), color=PALETTE[i % len(PALETTE)], alpha=0.7)
        ax.scatter(np.full(len(vals), i), vals, color="k", s=8, zorder=3)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names)
    ax.set_ylabel("seed mIoU")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
