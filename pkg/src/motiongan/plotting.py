"""Static figures for training logs and metric reports (PNG, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .training import TrainLog

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no software/date stamps, so identical inputs give identical bytes
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def smooth(values, window: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if window <= 1 or len(values) < window:
        return values
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def plot_training_log(log: TrainLog, path, window: int = 25) -> Path:
    """Losses on top, critic gap and penalty below."""
    if len(log) == 0:
        raise ValueError("training log is empty")
    it = np.asarray(log.iter)
    with plt.rc_context(STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
        for name, color in (("d_loss", "tab:red"), ("g_loss", "tab:blue")):
            y = smooth(getattr(log, name), window)
            top.plot(it[len(it) - len(y):], y, color=color, lw=1, label=name)
        top.set_ylabel("loss")
        top.legend(loc="upper right", frameon=False)
        gap = smooth(log.gap, window)
        bottom.plot(it[len(it) - len(gap):], gap, color="tab:green", lw=1, label="E D(real) - E D(fake)")
        pen = smooth(log.penalty, window)
        bottom.plot(it[len(it) - len(pen):], pen, color="tab:gray", lw=1, label="penalty")
        bottom.set_xlabel("generator step")
        bottom.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_metrics(metrics: dict, path, title: str = "") -> Path:
    """Bar chart of accuracy next to the Frechet distances (log scale)."""
    if not metrics:
        raise ValueError("no metrics to plot")
    fids = {k: v for k, v in metrics.items() if k.startswith("FID")}
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(7, 3), gridspec_kw={"width_ratios": [1, max(len(fids), 1)]})
        acc = metrics.get("Acc.")
        if acc is not None:
            left.bar(["Acc."], [acc], color="tab:blue")
            left.set_ylim(0, 1)
            left.text(0, acc, f"{acc:.3f}", ha="center", va="bottom")
        else:
            left.axis("off")
        if fids:
            names = list(fids)
            vals = [max(fids[n], 1e-6) for n in names]
            right.bar(names, vals, color="tab:orange")
            right.set_yscale("log")
            for i, v in enumerate(fids.values()):
                right.text(i, max(v, 1e-6), f"{v:.3g}", ha="center", va="bottom")
        else:
            right.axis("off")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)
