"""Report figures: training loss curves and recall@K bars."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
WIDTH_IN = 5.0
COLORS = ("#2b8cbe", "#e34a33", "#31a354", "#756bb1")

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curves(history: Sequence[dict], path, smooth: int = 10) -> Path:
    """Per-objective and total loss against step, with a trailing moving average."""
    keys = ("total", "l_itc", "l_itm", "l_mlm")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(WIDTH_IN, WIDTH_IN * GOLDEN))
        steps = np.array([h["step"] for h in history])
        for key, color in zip(keys, COLORS):
            y = np.array([h[key] for h in history], dtype=np.float64)
            ax.plot(steps, y, color=color, alpha=0.25)
            if y.size >= smooth > 1:
                avg = np.convolve(y, np.ones(smooth) / smooth, mode="valid")
                ax.plot(steps[smooth - 1:], avg, color=color, label=key)
            else:
                ax.plot(steps, y, color=color, label=key)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False, ncol=4, loc="upper right")
        return _save(fig, path)


def recall_bars(reports: Sequence, path, chance: float = None) -> Path:
    """Grouped R@K bars (percent) for each retrieval direction."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(WIDTH_IN, WIDTH_IN * GOLDEN))
        ks = sorted(reports[0].r_at) if reports else []
        width = 0.8 / max(len(reports), 1)
        x = np.arange(len(ks))
        for i, (rep, color) in enumerate(zip(reports, COLORS)):
            vals = [100.0 * rep.r_at[k] for k in ks]
            ax.bar(x + (i - (len(reports) - 1) / 2) * width, vals, width, color=color,
                   label=rep.direction.replace("_", " "))
        if chance is not None:
            ax.axhline(100.0 * chance, color="0.4", lw=0.8, ls="--", label="chance (R@1)")
        ax.set_xticks(x)
        ax.set_xticklabels([f"R@{k}" for k in ks])
        ax.set_ylim(0, 100)
        ax.set_ylabel("recall (%)")
        if reports:
            ax.set_title(f"RSUM {reports[0].rsum:.2f}")
        ax.legend(frameon=False, loc="upper left")
        return _save(fig, path)
