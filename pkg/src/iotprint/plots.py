"""Figure rendering for the report path.

Uses the Agg backend so runs work headless; every figure goes to a file
next to the delimited outputs.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .errors import IoFailure  # noqa: E402
from .transform import IMAGE_SIDE  # noqa: E402


def save_training_curves(history, path, title: str | None = None,
                         chosen_epoch: int | None = None) -> Path:
    """Two stacked panels: validation accuracy and loss per epoch."""
    epochs = np.arange(1, len(history) + 1)
    fig, (ax_acc, ax_loss) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_acc.plot(epochs, history.val_accuracy, marker="o", color="tab:blue")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.grid(alpha=0.3)
    if title:
        ax_acc.set_title(title)
    ax_loss.plot(epochs, history.val_loss, marker="o", color="tab:blue",
                 label="validation")
    ax_loss.plot(epochs, history.train_loss, marker=".", color="tab:orange",
                 label="train")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.grid(alpha=0.3)
    ax_loss.legend()
    if chosen_epoch is not None:
        for ax in (ax_acc, ax_loss):
            ax.axvline(chosen_epoch, color="tab:red", linestyle="--", alpha=0.6)
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=120)
    except OSError as exc:
        raise IoFailure(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return Path(path)


def save_payload_grid(images: np.ndarray, path, columns: int = 8,
                      title: str | None = None) -> Path:
    """Tile up to columns^2 payload images as 28x28 grayscale thumbnails."""
    count = min(len(images), columns * columns)
    rows = max(1, math.ceil(count / columns))
    fig, axes = plt.subplots(rows, columns, figsize=(columns, rows + 0.5))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes:
        ax.axis("off")
    for i in range(count):
        axes[i].imshow(np.asarray(images[i]).reshape(IMAGE_SIDE, IMAGE_SIDE),
                       cmap="gray", vmin=0, vmax=255, interpolation="nearest")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=120)
    except OSError as exc:
        raise IoFailure(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return Path(path)
