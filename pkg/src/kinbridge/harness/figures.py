"""PNG figures written next to the CSV/JSON artifacts.

The Agg backend and empty metadata keep the files byte-identical between
reruns of the same configuration.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=90, metadata=_META)
    plt.close(fig)


def plot_h_series(path, series: dict, title: str = ""):
    """``series`` maps a label to (t, H, stderr)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (t, h, se) in series.items():
        ax.errorbar(t, h, yerr=se, marker="o", ms=3, capsize=2, label=label)
    ax.set_xlabel("t [mean free times]")
    ax.set_ylabel("H")
    if title:
        ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_speed_distributions(path, edges, densities: dict, title: str = ""):
    centres = 0.5 * (edges[1:] + edges[:-1])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, d in densities.items():
        ax.step(centres, d, where="mid", label=label)
    ax.set_xlabel("|p| / m")
    ax.set_ylabel("speed density")
    if title:
        ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_chaos(path, names, estimates, stderrs, title: str = ""):
    """Per-seed residuals (rows) for each test function (columns)."""
    est = np.asarray(estimates, float)
    se = np.asarray(stderrs, float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m, name in enumerate(names):
        x = np.arange(est.shape[0]) + 0.15 * m
        ax.errorbar(x, est[:, m], yerr=se[:, m], fmt="o", ms=3, capsize=2, label=name)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("seed index")
    ax.set_ylabel("chaos residual")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_trend(path, mus, panels: dict):
    """``panels`` maps a label to (median, lo, hi) arrays along the schedule."""
    fig, axes = plt.subplots(1, len(panels), figsize=(4.5 * len(panels), 3.5))
    axes = np.atleast_1d(axes)
    for ax, (label, (med, lo, hi)) in zip(axes, panels.items()):
        med, lo, hi = (np.asarray(x, float) for x in (med, lo, hi))
        # percentile bands need not contain the point estimate
        yerr = [np.maximum(med - lo, 0.0), np.maximum(hi - med, 0.0)]
        ax.errorbar(mus, med, yerr=yerr, marker="o", capsize=3)
        ax.set_xscale("log")
        ax.invert_xaxis()
        ax.set_xlabel("mu")
        ax.set_ylabel(label)
    _save(fig, path)


def plot_bogolyubov(path, speeds, fields: dict):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (v, se) in fields.items():
        ax.errorbar(speeds, v, yerr=se, marker="o", ms=3, capsize=2, label=label)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("|p| / m")
    ax.set_ylabel("df/dt")
    ax.legend(fontsize=7)
    _save(fig, path)
