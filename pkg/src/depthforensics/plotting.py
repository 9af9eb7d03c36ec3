"""Report figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .losses import roc_curve  # noqa: E402


def plot_training_curves(rows: list[dict], path: str | Path) -> Path:
    """Loss terms and held-out AUC per epoch from metrics rows."""
    fig, (ax_loss, ax_auc) = plt.subplots(1, 2, figsize=(10, 4))
    splits = sorted({r["split"] for r in rows})
    for split in splits:
        sub = [r for r in rows if r["split"] == split]
        epochs = [r["epoch"] for r in sub]
        style = "-" if split == "train" else "--"
        for key in ("total", "l_c", "l_ssim", "l_pmse"):
            ax_loss.plot(epochs, [r[key] for r in sub], style, marker=".", label=f"{split} {key}")
        ax_auc.plot(epochs, [r["auc"] for r in sub], style, marker="o", label=f"{split} AUC")
        ax_auc.plot(epochs, [r["acc"] for r in sub], style, marker="x", label=f"{split} ACC")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.set_yscale("log")
    ax_loss.legend(fontsize=7)
    ax_auc.set_xlabel("epoch")
    ax_auc.set_ylim(0.0, 1.02)
    ax_auc.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_roc(scores, labels, path: str | Path, title: str = "") -> Path:
    curve = roc_curve(scores, labels)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(curve.fpr, curve.tpr, drawstyle="steps-post")
    ax.plot([0, 1], [0, 1], ":", color="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_depth_examples(previews: dict, path: str | Path) -> Path:
    """First frame, raw depth and ground truth for one item per label."""
    labels = sorted(previews)
    fig, axes = plt.subplots(len(labels), 3, figsize=(9, 3 * len(labels)), squeeze=False)
    for row, label in zip(axes, labels):
        seq, g = previews[label]
        name = "fake" if label else "real"
        row[0].imshow(seq.frames[:, 0].transpose(1, 2, 0).astype("uint8"))
        row[0].set_title(f"{name}: frame 0")
        row[1].imshow(seq.depth[0], cmap="magma", vmin=0, vmax=255)
        row[1].set_title("raw depth")
        row[2].imshow(g[0], cmap="magma", vmin=0, vmax=255)
        row[2].set_title("ground truth")
        for ax in row:
            ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
