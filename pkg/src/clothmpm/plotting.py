"""Report figures written next to the structured-text outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_history(history, path, trajectory=None):
    """Loss and running minimum on a log axis; parameter traces if given."""
    history = np.asarray(history, dtype=float)
    it = np.arange(1, len(history) + 1)
    ncols = 2 if trajectory else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5.5 * ncols, 3.8), squeeze=False)
    ax = axes[0, 0]
    positive = np.where(history > 0, history, np.nan)
    ax.plot(it, positive, lw=1, label="loss")
    ax.plot(it, np.minimum.accumulate(history), lw=1.5, label="best so far")
    if np.any(history > 0):
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("vertex L2 loss")
    ax.legend()
    if trajectory:
        ax = axes[0, 1]
        for key in ("rho", "E", "alpha"):
            vals = np.array([getattr(p, key) for p in trajectory], dtype=float)
            ax.plot(it[: len(vals)], vals / vals[0], label=f"{key} / {key}0")
        ax.set_xlabel("iteration")
        ax.set_ylabel("relative value")
        ax.legend()
    return _save(fig, path)


def plot_metrics(records, path):
    """Per-frame Chamfer distance, F-Score and (if present) penetration depth."""
    frames = [r["frame"] for r in records]
    keys = [k for k in ("chamfer", "f_score", "penetration_depth")
            if any(r.get(k) is not None for r in records)]
    fig, axes = plt.subplots(1, len(keys), figsize=(4.2 * len(keys), 3.4), squeeze=False)
    for ax, key in zip(axes[0], keys):
        ax.plot(frames, [r.get(key, np.nan) for r in records], marker=".", lw=1)
        ax.set_xlabel("frame")
        ax.set_title(key.replace("_", " "))
    return _save(fig, path)


def plot_frame_times(times, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(np.arange(1, len(times) + 1), times, width=0.8)
    ax.set_xlabel("frame")
    ax.set_ylabel("wall time [s]")
    return _save(fig, path)
