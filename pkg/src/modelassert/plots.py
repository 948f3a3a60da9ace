"""Figure rendering for the ``report`` command."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.5, 3.0),
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_curves(curves: dict[str, dict], path, metric: str = "triggers") -> Path:
    """One line per policy: ``metric`` against cumulative labels."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for policy, curve in curves.items():
            ax.plot(curve["labels"], curve[metric], marker="o", markersize=3, label=policy)
        ax.set_xlabel("cumulative labels")
        ax.set_ylabel("assertions triggered" if metric == "triggers" else metric)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_percentiles(rows: dict[str, list[tuple[int, float]]], path) -> Path:
    """Confidence percentile of the most confident flagged points by rank."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for name, pts in rows.items():
            if pts:
                ranks, pcts = zip(*pts)
                ax.plot(ranks, pcts, marker="o", markersize=3, label=name)
        ax.set_xlabel("rank of flagged point")
        ax.set_ylabel("confidence percentile")
        ax.set_ylim(0, 102)
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.legend(frameon=False, loc="best")
        return _save(fig, path)
