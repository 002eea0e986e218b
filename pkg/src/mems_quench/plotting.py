"""Figures written next to the CSV outputs (Agg backend, no display needed)."""

from __future__ import annotations

from typing import Sequence


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_path(realization, grid, path, threshold: float | None = None) -> None:
    """Max-norm history (left) and recorded profiles (right) of one path."""
    plt = _pyplot()
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    if realization.max_history is not None:
        t, m = realization.max_history
        ax0.plot(t, m, lw=1)
    if threshold is not None:
        ax0.axhline(threshold, color="k", ls=":", lw=0.8)
    ax0.set_xlabel("t")
    ax0.set_ylabel("max u")
    for t, u in realization.snapshots:
        ax1.plot(grid.nodes, u, lw=0.8, label=f"t={t:.3g}")
    ax1.set_xlabel("x")
    ax1.set_ylabel("u")
    if 0 < len(realization.snapshots) <= 8:
        ax1.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_table(summaries: Sequence, path) -> None:
    """Quench fraction and mean quench time against lambda."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    lams = [s.lam for s in summaries]
    ax.plot(lams, [s.quench_fraction for s in summaries], "o-", label="quench fraction")
    mt = [(s.lam, s.mean_Tq / s.T) for s in summaries if s.mean_Tq is not None]
    if mt:
        ax.plot(*zip(*mt), "s--", label="mean T_q / T")
    ax.set_xlabel("lambda")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_curve(param: str, values: Sequence[float], results: Sequence, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    p = [r.value for r in results]
    ax.plot(values, p, label="no quench")
    ax.plot(values, [1 - v for v in p], ls="--", label="quench (lower bound)")
    ax.set_xlabel(param)
    ax.set_ylabel("probability")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
