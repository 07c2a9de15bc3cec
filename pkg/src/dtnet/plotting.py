"""Figures written next to the text/CSV reports.

Everything renders off-screen with the Agg backend and returns the written path.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
# keep PNGs byte-stable across runs
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def confusion_figure(cm, path, title="Confusion matrix"):
    counts = cm.counts
    with plt.rc_context(STYLE):
        n = len(counts)
        fig, ax = plt.subplots(figsize=(1.0 + 0.45 * n, 0.8 + 0.45 * n))
        rows = counts.sum(axis=1, keepdims=True)
        frac = np.divide(counts, rows, out=np.zeros(counts.shape), where=rows > 0)
        im = ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
        for i in range(n):
            for j in range(n):
                if counts[i, j]:
                    ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                            color="white" if frac[i, j] > 0.5 else "black", fontsize=7)
        ax.set_xticks(range(n), cm.class_names)
        ax.set_yticks(range(n), cm.class_names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(f"{title} (rate {cm.overall_rate:.3f})")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="row fraction")
        return _save(fig, path)


def rates_figure(cm, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.0, 0.4 * len(cm.class_names) + 1), 2.5))
        rates = np.nan_to_num(cm.per_class_rates())
        ax.bar(range(len(rates)), rates, color="0.4")
        ax.axhline(cm.overall_rate, color="C3", lw=1, label=f"overall {cm.overall_rate:.3f}")
        ax.set_xticks(range(len(rates)), cm.class_names)
        ax.set_ylim(0, 1)
        ax.set_ylabel("recognition rate")
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def feature_grid_figure(ae, radius, path, n_channels=2, channel_names=("OFF", "ON")):
    """Decoder columns of a first-layer autoencoder drawn as time-surface images."""
    side = 2 * radius + 1
    feats = ae.W_dec.T.reshape(ae.code_dim, side, side, n_channels)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(n_channels, ae.code_dim,
                                 figsize=(0.8 * ae.code_dim + 0.5, 0.9 * n_channels + 0.3),
                                 squeeze=False)
        lim = np.abs(feats).max() or 1.0
        for j in range(ae.code_dim):
            for c in range(n_channels):
                ax = axes[c, j]
                ax.imshow(feats[j, :, :, c], cmap="RdBu_r", vmin=-lim, vmax=lim)
                ax.set_xticks([])
                ax.set_yticks([])
                if c == 0:
                    ax.set_title(str(j), fontsize=8)
                if j == 0:
                    ax.set_ylabel(channel_names[c] if c < len(channel_names) else str(c))
        return _save(fig, path)


def training_figure(reports, path):
    """Autoencoder error trajectories and classifier loss/accuracy per epoch."""
    layers = reports.get("layers", [])
    clf = reports.get("classifier", {})
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 2.6))
        for i, rep in enumerate(layers):
            a1.plot(np.arange(1, len(rep["trajectory"]) + 1), rep["trajectory"],
                    label=f"layer {i + 1}")
        a1.set_xlabel("surfaces (x1000)")
        a1.set_ylabel("running reconstruction MSE")
        a1.set_yscale("log")
        if layers:
            a1.legend(frameon=False)
        if clf.get("epoch_loss"):
            ep = np.arange(1, len(clf["epoch_loss"]) + 1)
            a2.plot(ep, clf["epoch_loss"], color="C0", label="loss")
            b = a2.twinx()
            b.plot(ep, clf["epoch_accuracy"], color="C1", label="train accuracy")
            b.set_ylim(0, 1)
            b.set_ylabel("train accuracy")
        a2.set_xlabel("epoch")
        a2.set_ylabel("cross-entropy")
        return _save(fig, path)


def throughput_figure(rows, path):
    """Events per second against surface radius from bench rows."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 2.4))
        radii = [r["radius"] for r in rows]
        ax.plot(radii, [r["events_per_s"] for r in rows], "o-", color="0.3")
        ax.set_xlabel("radius R")
        ax.set_ylabel("events / s")
        ax.set_xticks(radii)
        return _save(fig, path)
