"""Figures written next to the CSV reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def report_style(width=8.0, height=None):
    """Figure with consistent fonts; height defaults to width times the golden ratio."""
    golden = (np.sqrt(5) - 1.0) / 2.0
    plt.rcParams.update({
        "font.size": 10,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "svg.hashsalt": "thermorom",
    })
    return plt.figure(figsize=(width, height or width * golden))


def _hours(epochs, t0):
    return (np.asarray(epochs, dtype=float) - t0) / 3600.0


def plot_track_density(rows, path, title="", t0=None):
    """Measured, assimilated and open-loop density along one track."""
    epochs = np.array([r["epoch"] for r in rows], dtype=float)
    t0 = epochs[0] if t0 is None and epochs.size else (t0 or 0.0)
    fig = report_style(9.0, 4.0)
    ax = fig.add_subplot(111)
    if epochs.size:
        h = _hours(epochs, t0)
        ax.semilogy(h, [r["rho_meas"] for r in rows], ".", ms=2, color="0.5", label="measured")
        ax.semilogy(h, [r["rho_open"] for r in rows], "-", lw=0.8, color="tab:red", label="open loop")
        ax.semilogy(h, [r["rho_assim"] for r in rows], "-", lw=0.8, color="tab:blue", label="assimilated")
        ax.legend(loc="upper right", frameon=False)
    ax.set_xlabel("hours since start")
    ax.set_ylabel(r"density [kg m$^{-3}$]")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_latent(epochs, z_assim, z_open, path):
    """Filtered latent heatmap over the open-loop leading modes."""
    h = _hours(epochs, epochs[0])
    fig = report_style(9.0, 6.0)
    ax1 = fig.add_subplot(211)
    im = ax1.imshow(z_assim, aspect="auto", cmap="RdBu_r", interpolation="nearest",
                    extent=[h[0], h[-1], z_assim.shape[0] - 0.5, -0.5])
    fig.colorbar(im, ax=ax1, label="z")
    ax1.set_ylabel("latent mode")
    ax1.set_title("assimilated latent state")
    ax2 = fig.add_subplot(212, sharex=ax1)
    for i in range(min(3, z_assim.shape[0])):
        line, = ax2.plot(h, z_assim[i], lw=0.9, label=f"z{i + 1}")
        ax2.plot(h, z_open[i], "--", lw=0.7, color=line.get_color())
    ax2.set_xlabel("hours since start")
    ax2.set_ylabel("z (dashed: open loop)")
    ax2.legend(loc="upper right", frameon=False, ncol=3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_innovations(rows, path, t0=None):
    fig = report_style(9.0, 4.0)
    ax = fig.add_subplot(111)
    if rows:
        epochs = np.array([r["epoch"] for r in rows], dtype=float)
        t0 = epochs[0] if t0 is None else t0
        nu = np.array([r["nu"] for r in rows])
        s = np.array([r["s"] for r in rows])
        ax.plot(_hours(epochs, t0), nu / np.sqrt(s), ".", ms=2)
        ax.axhline(3, color="0.6", lw=0.6)
        ax.axhline(-3, color="0.6", lw=0.6)
    ax.set_xlabel("hours since start")
    ax.set_ylabel(r"$\nu / \sqrt{S}$")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_mape_summary(summary, path):
    sats = sorted({row["satellite"] for row in summary})
    assim = [next((r["mape"] for r in summary if r["satellite"] == s and r["estimate"] == "assimilated"), np.nan)
             for s in sats]
    open_ = [next((r["mape"] for r in summary if r["satellite"] == s and r["estimate"] == "open_loop"), np.nan)
             for s in sats]
    x = np.arange(len(sats))
    fig = report_style(6.0)
    ax = fig.add_subplot(111)
    ax.bar(x - 0.2, open_, 0.4, label="open loop", color="tab:red")
    ax.bar(x + 0.2, assim, 0.4, label="assimilated", color="tab:blue")
    ax.set_xticks(x, sats)
    ax.set_ylabel("MAPE [%]")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
