"""Figures written next to the CSV reports.

Everything renders off-screen with the Agg backend and returns the path it
wrote.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .transforms import TransformFamily, apply_family, sample_hyperparams  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_cost_comparison(standard, sinefm, path, title=None):
    """Side-by-side per-layer params and FLOPs for a standard/SineFM pair."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3))
        labels = [r.layer for r in standard.rows]
        x = np.arange(len(labels))
        by_name = {r.layer.split(":")[0]: r for r in sinefm.rows}
        for ax, attr, unit in ((axes[0], "params", "parameters"), (axes[1], "flops", "FLOPs")):
            std = [getattr(r, attr) for r in standard.rows]
            sfm = [getattr(by_name.get(r.layer.split(":")[0], r), attr) for r in standard.rows]
            ax.bar(x - 0.2, std, 0.4, label="standard conv", color="0.6")
            ax.bar(x + 0.2, sfm, 0.4, label="SineFM", color="tab:blue")
            ax.set_xticks(x)
            ax.set_xticklabels(labels, rotation=60, ha="right")
            ax.set_ylabel(unit)
            ratio = getattr(standard, f"total_{attr}") / getattr(sinefm, f"total_{attr}")
            ax.set_title(f"{unit}: {ratio:.2f}x fewer")
        axes[0].legend(frameon=False)
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_ablation(table, path):
    """Mean and std of the final metric per transform family."""
    summary = table.ranking()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        names = [s[0] for s in summary]
        means = [s[1][0] for s in summary]
        stds = [s[1][1] for s in summary]
        ax.bar(names, means, yerr=stds, capsize=3, color="tab:blue")
        ax.set_ylabel("final test metric")
        ax.set_ylim(min(means) - 0.1 if means else 0, 1.0)
        ax.tick_params(axis="x", rotation=45)
        return _save(fig, path)


def plot_sweep(curve, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        xs = [r[0] for r in curve.rows]
        ax.plot(xs, [r[1] for r in curve.rows], "o-", color="tab:blue")
        ax.set_xlabel(curve.axis)
        ax.set_ylabel("final test metric", color="tab:blue")
        if curve.axis == "c_s":
            twin = ax.twinx()
            twin.plot(xs, [r[2] for r in curve.rows], "s--", color="tab:red")
            twin.set_ylabel("learnable parameters", color="tab:red")
        return _save(fig, path)


def plot_history(history, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        epochs = [r.epoch for r in history.records]
        ax.plot(epochs, [r.loss for r in history.records], color="tab:red", label="loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss")
        twin = ax.twinx()
        twin.plot(epochs, [r.metric for r in history.records], color="tab:blue")
        twin.set_ylabel("train metric")
        return _save(fig, path)


def plot_transforms(path, seed=0, count=4, lim=2.0):
    """Curves of every family over ``[-lim, lim]`` for a few sampled channels."""
    x = np.linspace(-lim, lim, 401)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 3, figsize=(8, 6), sharex=True)
        for ax, fam in zip(axes.flat, TransformFamily):
            spec = sample_hyperparams(seed, fam, count)
            vals, _ = apply_family(fam, spec.params, np.tile(x, (count, 1)), axis=0)
            for row in vals:
                ax.plot(x, row, lw=1)
            ax.set_title(fam.label)
        return _save(fig, path)
