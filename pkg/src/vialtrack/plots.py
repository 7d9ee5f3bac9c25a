"""Static SVG figures for actograms and periodograms."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .analysis import Actogram, Periodogram, peak_period  # noqa: E402


def plot_actogram(act: Actogram, path: str | Path, title: str = "") -> None:
    days, width = act.matrix.shape
    fig, ax = plt.subplots(figsize=(8, max(2.0, 0.3 * days)))
    vmax = max(1, act.matrix.max())
    ax.imshow(
        act.matrix,
        aspect="auto",
        cmap="Greys",
        interpolation="nearest",
        vmin=0,
        vmax=vmax,
        extent=(0, 2 * act.period_hours, days, 0),
    )
    ax.axvline(act.period_hours, color="tab:red", lw=0.8, alpha=0.6)
    ax.set_xlabel(f"time (h, double plotted at {act.period_hours:g} h)")
    ax.set_ylabel("day")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_periodogram(pg: Periodogram, path: str | Path, title: str = "") -> None:
    period, power, significant = peak_period(pg)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(pg.periods_hours, pg.power, color="tab:blue", lw=1.2)
    ax.axhline(
        pg.threshold,
        color="tab:red",
        ls="--",
        lw=0.9,
        label=f"false-alarm threshold (alpha={pg.alpha:g})",
    )
    marker = "o" if significant else "x"
    ax.plot([period], [power], marker, color="tab:orange", label=f"peak {period:.1f} h")
    ax.set_xlabel("period (h)")
    ax.set_ylabel("normalized power")
    ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
