"""Figures written next to verification reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _figure(width=6.0, height=None):
    height = height or width * 0.62
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def _save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig.tight_layout()
        fig.savefig(path)
    plt.close(fig)
    return path


def plot_log_ratios(estimate, epsilon: float, slack: float, path, title: str = "") -> Path:
    """Smoothed |log ratio| per statistic bin against the bin's sample mass."""
    fig, ax = _figure()
    mass = np.asarray(estimate.bin_mass)
    ratio = np.asarray(estimate.log_ratios)
    keep = mass >= estimate.min_count
    ax.scatter(mass[~keep], ratio[~keep], s=6, c="0.75", label="below min count")
    ax.scatter(mass[keep], ratio[keep], s=10, c="C0", label="used")
    ax.axhline(epsilon, color="k", lw=1, label=r"$\epsilon$")
    ax.axhline(epsilon + slack, color="C3", lw=1, ls="--", label=r"$\epsilon$ + slack")
    ax.axvline(estimate.min_count, color="0.5", lw=0.8, ls=":")
    ax.set_xscale("log")
    ax.set_xlabel("combined bin count")
    ax.set_ylabel("|log P1/P2|")
    ax.set_title(title or f"estimated epsilon {estimate.epsilon:.3f}")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_error_distribution(result, path) -> Path:
    """Errors normalised by their bound; mass right of 1 is a bound violation."""
    fig, ax = _figure()
    ratio = np.asarray(result.errors) / np.asarray(result.limits)
    ax.hist(ratio, bins=60, color="C0", alpha=0.8)
    ax.axvline(1.0, color="C3", lw=1.2)
    ax.set_xlabel("error / bound")
    ax.set_ylabel("trials")
    ax.set_title(f"{result.name}: pass rate {result.pass_rate:.4f} (target {result.target:.3f})")
    return _save(fig, path)


def plot_access_pattern(trace, path, title: str = "", max_events: int = 20_000) -> Path:
    """Cell index against time, one colour per array."""
    fig, ax = _figure(7.0)
    n = min(len(trace), max_events)
    codes = trace.codes[:n]
    for code in np.unique(codes):
        sel = codes == code
        seq = np.flatnonzero(sel)
        ax.scatter(seq, trace.indices[:n][sel], s=2, label=trace.names[code])
    ax.set_xlabel("event")
    ax.set_ylabel("cell index")
    ax.set_title(title or f"access pattern ({n} of {len(trace)} events)")
    ax.legend(frameon=False, fontsize=8, markerscale=4)
    return _save(fig, path)
