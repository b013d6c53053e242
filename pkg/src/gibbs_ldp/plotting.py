"""Figures written next to the CSV outputs of the ladder subcommands."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ladder(ns, values, errors, path, ylabel, reference=None, reference_label=None, title=None):
    """Normalized estimates against n on a log axis, with 1-sigma bars and an optional reference curve."""
    ns = np.asarray(ns, dtype=float)
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.errorbar(ns, values, yerr=errors, marker="o", ms=4, capsize=3, lw=1.2, label="estimate")
    if reference is not None:
        ax.plot(ns, reference, ls="--", color="0.4", lw=1.0, label=reference_label)
        ax.legend(frameon=False)
    ax.axhline(0.0, color="0.8", lw=0.8, zorder=0)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("n")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, fontsize=10)
    return _finish(fig, path)


def plot_differences(ns, values, path):
    """|successive difference| of a ladder on log-log axes."""
    ns = np.asarray(ns, dtype=float)
    diffs = np.abs(np.diff(values))
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.plot(ns[1:], np.maximum(diffs, 1e-300), marker="s", ms=4, lw=1.2)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("|successive difference|")
    return _finish(fig, path)
