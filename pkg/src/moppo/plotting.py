"""PNG figures rendered next to the CSV outputs (headless Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import non_dominated_mask  # noqa: E402


def _save(fig, path) -> None:
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def plot_hv_curves(curves: dict, path, title: str = "Hypervolume by stage") -> None:
    """``curves`` maps a label to ``(stages, mean, std)`` arrays."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (stages, mean, std) in curves.items():
        stages, mean, std = map(np.asarray, (stages, mean, std))
        ax.plot(stages, mean, marker="o", ms=3, label=label)
        ax.fill_between(stages, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("stage")
    ax.set_ylabel("HV")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_fronts(fronts: dict, path, title: str = "Objective vectors and Pareto front",
                true_front=None) -> None:
    """``fronts`` maps a label to an ``(n, m)`` array of objective vectors.

    Two objectives give one scatter panel; three give the three pairwise
    projections.  Non-dominated points are drawn solid, the rest faded.
    """
    items = [(k, np.asarray(v, dtype=float)) for k, v in fronts.items() if len(v)]
    m = items[0][1].shape[1] if items else 2
    pairs = [(0, 1)] if m == 2 else [(0, 1), (0, 2), (1, 2)]
    fig, axes = plt.subplots(1, len(pairs), figsize=(5 * len(pairs), 4.5), squeeze=False)
    for ax, (a, b) in zip(axes[0], pairs):
        if true_front is not None:
            tf = np.asarray(true_front)
            ax.plot(tf[:, a], tf[:, b], color="0.6", lw=1, label="true front")
        for label, pts in items:
            mask = non_dominated_mask(pts)
            line, = ax.plot(pts[mask, a], pts[mask, b], "o", ms=4, label=label)
            ax.plot(pts[~mask, a], pts[~mask, b], ".", ms=2, alpha=0.25, color=line.get_color())
        ax.set_xlabel(f"objective {a + 1}")
        ax.set_ylabel(f"objective {b + 1}")
        ax.grid(alpha=0.3)
    axes[0][0].legend(fontsize=8)
    fig.suptitle(title)
    _save(fig, path)


def plot_interpolation(rows, path, key: str = "hv", label: str = "HV") -> None:
    """Metric against the number of evaluation vectors per sub-space."""
    n = np.array([r["n"] for r in rows])
    mean = np.array([r[key] for r in rows])
    std = np.array([r[f"{key}_std"] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(n, mean, yerr=std, marker="o", capsize=3)
    ax.set_xlabel("evaluation vectors per sub-space")
    ax.set_ylabel(label)
    ax.grid(alpha=0.3)
    _save(fig, path)
