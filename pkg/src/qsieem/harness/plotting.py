"""SVG figures rendered with matplotlib (Agg backend, no display)."""

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "qsieem"
_META = {"Date": None, "Creator": "qsieem"}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="svg", metadata=_META, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, path)


def error_scatter(groups, path, title=None):
    """Relative error against number of batches, one panel per batch size,
    with marginal histograms. ``groups`` maps r -> (batches, errors)."""
    keys = sorted(groups)
    fig = plt.figure(figsize=(4.2 * len(keys), 4.2))
    outer = fig.add_gridspec(1, len(keys), wspace=0.35)
    for i, r in enumerate(keys):
        b, e = (np.asarray(v, dtype=float) for v in groups[r])
        inner = outer[i].subgridspec(2, 2, width_ratios=(4, 1), height_ratios=(1, 4), wspace=0.05, hspace=0.05)
        ax = fig.add_subplot(inner[1, 0])
        top = fig.add_subplot(inner[0, 0], sharex=ax)
        side = fig.add_subplot(inner[1, 1], sharey=ax)
        ax.scatter(b, e, s=14, alpha=0.7)
        ax.set_xlabel("number of batches")
        ax.set_ylabel("relative error")
        top.hist(b, bins=min(20, max(3, len(b))), color="0.5")
        finite = e[np.isfinite(e)]
        if finite.size:
            side.hist(finite, bins=min(20, max(3, finite.size)), orientation="horizontal", color="0.5")
        top.tick_params(labelbottom=False)
        side.tick_params(labelleft=False)
        top.set_title(f"r = {r}")
    if title:
        fig.suptitle(title)
    _save(fig, path)


def particle_marginals(points, names, path, title=None):
    """Histogram of each X-coordinate of a pooled particle cloud."""
    points = np.atleast_2d(points)
    d = points.shape[1]
    fig, axes = plt.subplots(1, d, figsize=(2.6 * d, 2.6), squeeze=False)
    for j in range(d):
        ax = axes[0, j]
        ax.hist(points[:, j], bins=30, color="0.4")
        ax.set_xlabel(names[j])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    _save(fig, path)


def misclass_curves(curves, path, title=None):
    """Median and 75% quantile of the misclassified proportion against the
    step, one line pair per method. ``curves`` maps method -> (steps, runs)."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for method, (steps, runs) in sorted(curves.items()):
        runs = np.atleast_2d(runs)
        med = np.median(runs, axis=0)
        q75 = np.quantile(runs, 0.75, axis=0)
        (line,) = ax.plot(steps, med, label=f"{method} (median)")
        ax.plot(steps, q75, linestyle="--", color=line.get_color(), label=f"{method} (75%)")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("proportion of misclassified points")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    _save(fig, path)
