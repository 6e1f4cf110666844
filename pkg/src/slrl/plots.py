"""Matplotlib figures rendered alongside the delimited reports.

All figures are written as PNG with date metadata stripped so reruns are
byte-identical.  pyplot is imported lazily: the solver itself never needs
a rendering backend.
"""

from __future__ import annotations

_SAVEFIG_KW = {"dpi": 110, "metadata": {"Date": None}}


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def convergence_figure(history, path, title: str = "") -> None:
    """Objective and relative residual versus iteration, residual on a log axis."""
    plt = _plt()
    iters = [rec["iteration"] for rec in history]
    fig, ax1 = plt.subplots(figsize=(6.0, 3.6))
    ax1.plot(iters, [rec["objective"] for rec in history], color="tab:blue", lw=1.2)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("objective", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.semilogy(
        iters, [max(rec["rel_residual"], 1e-16) for rec in history],
        color="tab:red", lw=1.2,
    )
    ax2.set_ylabel("relative residual", color="tab:red")
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def cr_figure(rows, path) -> None:
    """Stacked per-layer compression rates (sparse part over low-rank part)."""
    plt = _plt()
    names = [row["name"] for row in rows]
    cr_a = [row["cr_a"] for row in rows]
    cr_b = [row["cr_b"] for row in rows]
    xs = range(len(names))
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(names) + 2.0), 3.6))
    ax.bar(xs, cr_a, label="sparse", color="tab:blue")
    ax.bar(xs, cr_b, bottom=cr_a, label="low-rank", color="tab:orange")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("compression rate (%)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def tradeoff_figure(rows, path) -> None:
    """Held-out post-ReLU error versus CR for the two objectives."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for activation, color in (("relu", "black"), ("identity", "tab:orange")):
        pts = sorted(
            (row["cr_total"], row["holdout_error_rel"])
            for row in rows
            if row["activation"] == activation
        )
        if pts:
            ax.plot(
                [p[0] for p in pts],
                [p[1] for p in pts],
                marker="o",
                ms=3.5,
                lw=1.2,
                color=color,
                label="non-linear" if activation == "relu" else "linear",
            )
    ax.set_xlabel("compression rate (%)")
    ax.set_ylabel("held-out post-ReLU error (rel.)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def speedup_figure(reports, path) -> None:
    """Bar chart of measured speedups, one bar per benchmarked layer."""
    plt = _plt()
    names = [rep.layer_name or f"layer{i}" for i, rep in enumerate(reports)]
    values = [rep.speedup for rep in reports]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(names) + 2.0), 3.6))
    ax.bar(range(len(names)), values, color="tab:green")
    ax.axhline(1.0, color="gray", lw=0.8, ls="--")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("speedup (dense / compressed)")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
