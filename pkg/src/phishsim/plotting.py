"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import DendrogramNode, to_linkage_rows  # noqa: E402


def _figure(width: float = 6.0, height: float | None = None):
    golden = (np.sqrt(5) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, height or width * golden))
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_roc(roc, path, title: str = "ROC"):
    fig, (full, low) = plt.subplots(1, 2, figsize=(10, 4.2))
    for ax in (full, low):
        ax.plot(roc.fpr, roc.tpr, drawstyle="default", lw=1.5)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.grid(True, alpha=0.3)
    full.plot([0, 1], [0, 1], ls=":", c="grey")
    full.plot([roc.eer_fpr], [roc.eer_tpr], "o", c="C3", label=f"EER (fpr={roc.eer_fpr:.3f})")
    full.set_title(f"{title}  AUC={roc.auc:.4f}")
    full.legend(loc="lower right")
    low.set_xlim(0, roc.max_fpr)
    low.set_title(f"FPR <= {roc.max_fpr:g}  pAUC={roc.partial_auc_normalized:.4f}")
    return _save(fig, path)


def plot_iterations(report, path):
    its = report.per_iteration
    weeks = [it.week for it in its]
    x = np.arange(len(its))
    fig, (rates, growth) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    tpr = [np.nan if it.tpr is None else it.tpr for it in its]
    fpr = [np.nan if it.fpr is None else it.fpr for it in its]
    rates.plot(x, tpr, "o-", label="TPR")
    rates.plot(x, fpr, "s-", label="FPR")
    rates.set_ylim(-0.02, 1.02)
    rates.legend()
    rates.grid(True, alpha=0.3)
    growth.bar(x, [it.prototypes for it in its], color="C2", alpha=0.6, label="prototypes")
    growth.set_ylabel("prototypes")
    ratio = growth.twinx()
    ratio.plot(x, [it.ratio for it in its], "k.-", label="compression ratio")
    ratio.set_ylabel("compression ratio")
    growth.set_xticks(x)
    growth.set_xticklabels(weeks, rotation=60, fontsize=7)
    return _save(fig, path)


def plot_sweep(sweep, path):
    fig, ax = _figure()
    t = np.array([r[0] for r in sweep.grid])
    q = np.array([r[1] for r in sweep.grid])
    ax.plot(t, q, "o", ms=4, label="QC")
    xs = np.linspace(t.min(), t.max(), 400)
    ax.plot(xs, np.polynomial.Polynomial(sweep.fitted_coeffs)(xs), "-", label="degree-8 fit")
    ax.axvline(sweep.selected.d, ls="--", c="C3", label=f"selected {sweep.selected.d:.4f}")
    ax.set_xlabel("distance threshold")
    ax.set_ylabel("quality of clustering")
    ax.legend()
    return _save(fig, path)


def plot_dendrogram(tree: DendrogramNode, path):
    from scipy.cluster.hierarchy import dendrogram

    rows = to_linkage_rows(tree)
    z = np.array([[a, b, h, s] for a, b, h, s in rows], dtype=float)
    labels = [None] * tree.size
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            labels[node.index] = node.label
        else:
            stack += [node.left, node.right]
    fig, ax = _figure(max(6.0, 0.25 * tree.size), 4.5)
    dendrogram(z, labels=labels, ax=ax, leaf_rotation=90)
    ax.set_ylabel("NCD")
    return _save(fig, path)


def plot_bench(rows, path):
    fig, ax = _figure(7)
    names = ["tpr", "tnr", "accuracy", "auc", "gmean"]
    width = 0.8 / max(len(rows), 1)
    x = np.arange(len(names))
    for i, r in enumerate(rows):
        ax.bar(x + i * width, [getattr(r, n) for n in names], width, label=r.compressor)
    ax.set_xticks(x + width * (len(rows) - 1) / 2)
    ax.set_xticklabels(names)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    return _save(fig, path)
