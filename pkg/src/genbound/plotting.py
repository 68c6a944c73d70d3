"""Matplotlib figures written next to the CSV reports (Agg backend, PNG)."""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def _epoch_means(steps, name):
    epochs = steps["epoch"]
    vals = steps[name]
    keys = np.unique(epochs)
    return keys, np.array([np.nanmean(vals[epochs == e]) if np.any(~np.isnan(vals[epochs == e])) else np.nan
                           for e in keys])


def training_curves(steps, epochs, path):
    """Per-epoch dispersion and gradient norm (left), losses or accuracy (right)."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for name, label in (("dispersion", "mean dispersion"), ("grad_norm", "mean grad norm")):
        e, v = _epoch_means(steps, name)
        if np.any(np.isfinite(v)):
            ax1.plot(e, v, label=label)
    ax1.set_yscale("log")
    ax1.set_xlabel("epoch")
    ax1.legend()
    if np.any(np.isfinite(epochs["train_acc"])):
        ax2.plot(epochs["epoch"], epochs["train_acc"], label="train acc")
        ax2.plot(epochs["epoch"], epochs["test_acc"], label="test acc")
    else:
        ax2.plot(epochs["epoch"], epochs["train_loss"], label="train loss")
        ax2.plot(epochs["epoch"], epochs["test_loss"], label="test loss")
    ax2.set_xlabel("epoch")
    ax2.legend()
    return _save(fig, path)


def bound_vs_gap(reports, gap, path):
    """Stacked trajectory/flatness bars for each variant with the observed gap as a line."""
    fig, ax = plt.subplots(figsize=(max(4, 1.3 * len(reports) + 2), 4))
    names = [r.variant for r in reports]
    traj = np.array([r.trajectory_term for r in reports], dtype=float)
    flat = np.nan_to_num(np.array([r.flatness_term for r in reports], dtype=float))
    x = np.arange(len(reports))
    ax.bar(x, traj, label="trajectory")
    ax.bar(x, flat, bottom=traj, label="flatness")
    if math.isfinite(gap):
        ax.axhline(gap, color="k", ls="--", label="observed gap")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend()
    return _save(fig, path)


def trajectory_comparison(rows, sigma, path):
    """Cumulative trajectory terms per epoch for one noise level."""
    arr = np.asarray(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    for col, label in ((2, "log form"), (3, "linear form"), (4, "sensitivity-based"), (5, "corollary")):
        ax.plot(arr[:, 0], arr[:, col], label=label)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_title(f"sigma = {sigma:g}")
    ax.legend()
    return _save(fig, path)


def sweep_terms(rows, path):
    """Bound terms against batch size, one line per learning rate."""
    ok = [r for r in rows if r[-1] == "ok"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for lr in sorted({r[0] for r in ok}):
        sel = sorted((r for r in ok if r[0] == lr), key=lambda r: r[1])
        b = [r[1] for r in sel]
        ax.plot(b, [r[5] for r in sel], "o-", label=f"trajectory, lr={lr:g}")
        ax.plot(b, [r[6] for r in sel], "s--", label=f"flatness, lr={lr:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("batch size")
    if ok:
        ax.legend(fontsize=8)
    return _save(fig, path)
