"""Optional PNG rendering of curve and interval data.

The CSV reports are the primary output.  matplotlib is an optional extra
(``pip install maxfactor[plot]``) imported only when a plot is requested.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise UsageError("--plot needs matplotlib: pip install 'maxfactor[plot]'") from None

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_excess_curves(path, t, curves: dict, title="P[Q_r > t]"):
    """Line plot of excess probabilities, one line per category."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in curves.items():
        ax.plot(t, values, label=str(label))
    ax.set_xlabel("t")
    ax.set_ylabel("excess probability")
    ax.set_title(title)
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_intervals(path, panel, intervals):
    """Observed loss counts with prediction intervals, one panel per category."""
    plt = _pyplot()
    k = panel.k
    fig, axes = plt.subplots(k, 1, figsize=(7, 2.4 * k), squeeze=False)
    x = np.arange(panel.n)
    for r, ax in enumerate(axes[:, 0]):
        ax.fill_between(x, intervals.lower[r], intervals.upper[r], alpha=0.3, step="mid")
        ax.plot(x, panel.losses[r], "o", ms=3)
        ax.set_ylabel(panel.categories[r])
        ax.set_xticks(x)
        ax.set_xticklabels(panel.periods, rotation=90, fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
