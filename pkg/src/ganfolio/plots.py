"""Figure rendering for the report paths.

Figures are rendered straight to files with the Agg backend and carry no
timestamps, so byte-identical inputs produce byte-identical images.  The
CSV outputs remain the authoritative data; these are the quick-look
companions.
"""

from __future__ import annotations

from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .backtest import BacktestReport, GridResult  # noqa: E402
from .gan import LossTrace  # noqa: E402

_SAVEFIG_KW = {"dpi": 110, "metadata": {"Software": None}}


def save_loss_figure(path, trace: LossTrace) -> None:
    """Discriminator and generator loss per epoch."""
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = range(len(trace.d_loss))
    ax.plot(epochs, trace.d_loss, label="discriminator", lw=1.2)
    ax.plot(epochs, trace.g_loss, label="generator", lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def save_equity_figure(
    path,
    report: BacktestReport,
    grid: Optional[GridResult] = None,
) -> None:
    """Equity curves; with a grid, one curve per th_r at the report's th_p."""
    fig, ax = plt.subplots(figsize=(7, 4))
    times = [t for t, _ in report.period_returns]
    xs = [times[0]] + times if times else []
    if grid is not None:
        for th_r in grid.th_r_values:
            rep = grid.reports.get((report.th_p, th_r))
            if rep is None:
                continue
            ax.plot(xs, rep.equity_curve, lw=1.2, label=f"th_r={th_r:g}")
        ax.legend(frameon=False, fontsize=8)
    else:
        ax.plot(xs, report.equity_curve, lw=1.4, label=f"th_r={report.th_r:g}")
        ax.legend(frameon=False, fontsize=8)
    ax.axhline(1.0, color="gray", lw=0.8, ls="--")
    ax.set_xlabel("rebalance time")
    ax.set_ylabel("equity (start = 1.0)")
    ax.set_title(f"market-neutral equity, th_p={report.th_p:g}")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
