"""Figures rendered next to the CSV artifacts of the command line driver.

Everything goes through the non-interactive Agg backend and is written
straight to PNG; nothing here is needed to read or reproduce the numbers,
which live in the CSV and JSON files.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
    "svg.hashsalt": "specalign",
}
# deterministic PNG bytes: no timestamps or software tags in the metadata
PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)


def _scatter(ax, X, labels, size=4):
    if labels is None:
        ax.scatter(X[:, 0], X[:, 1], s=size, c="0.3", linewidths=0)
        return
    for c in np.unique(labels):
        sel = labels == c
        ax.scatter(X[sel, 0], X[sel, 1], s=size, linewidths=0, label=f"class {int(c)}")
    ax.legend(markerscale=3, loc="best")


def plot_points(X, labels, path, title="", anchors=None):
    """2-D scatter of the first two columns, coloured by label."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] == 1:
        X = np.column_stack([X[:, 0], np.zeros(len(X))])
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        _scatter(ax, X, None if labels is None else np.asarray(labels))
        if anchors is not None:
            A = X[np.asarray(anchors)]
            ax.scatter(A[:, 0], A[:, 1], s=30, facecolors="none", edgecolors="k",
                       linewidths=0.8, label="anchors")
            ax.legend(markerscale=1, loc="best")
        ax.set_title(title)
        ax.set_aspect("equal", adjustable="datalim")
        _save(fig, path)


def plot_training_loss(history, path):
    """Batch MSE and anchor fit residual against iteration."""
    it = np.array([r["iter"] for r in history])
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        if len(it):
            ax.semilogy(it, [r["loss"] for r in history], lw=0.8, label="batch MSE")
            ax.semilogy(it, [r["align_rmse"] ** 2 for r in history], lw=0.8,
                        label="anchor residual$^2$")
            ax.legend()
        ax.set_xlabel("iteration")
        _save(fig, path)


def plot_joint_curves(rows, path, ablated_rows=None):
    """Loss curves (left) and clustering NMI curves (right) of a joint run."""
    with plt.rc_context({**RC, "figure.figsize": (9.0, 3.6)}):
        fig, (ax_l, ax_n) = plt.subplots(1, 2)
        step = [r["spectral_step"] for r in rows]
        ax_l.semilogy(step, [r["feature_loss"] for r in rows], lw=0.8, label="feature")
        ax_l.semilogy(step, [r["spectral_loss"] for r in rows], lw=0.8, label="spectral")
        if ablated_rows:
            ax_l.semilogy([r["spectral_step"] for r in ablated_rows],
                          [r["spectral_loss"] for r in ablated_rows], lw=0.8,
                          label="spectral, no $T_G$")
        ax_l.set_xlabel("spectral step")
        ax_l.set_ylabel("loss")
        ax_l.legend()
        for key, name in (("nmi_analytic", "analytic"), ("nmi_train", "model, train"),
                          ("nmi_val", "model, validation")):
            pts = [(r["spectral_step"], r[key]) for r in rows if r.get(key) is not None]
            if pts:
                s, v = zip(*pts)
                ax_n.plot(s, v, marker="o", ms=2, lw=0.8, label=name)
        ax_n.set_xlabel("spectral step")
        ax_n.set_ylabel("NMI")
        ax_n.set_ylim(-0.02, 1.02)
        ax_n.legend(loc="lower right")
        _save(fig, path)
