"""Matplotlib figure rendering for the CLI report paths.

Figures are written as PNG next to the delimited tables.  All rendering
is deterministic (Agg backend, fixed sizes, no timestamps in metadata).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_decision_figure",
    "save_joint_mu_figure",
    "save_mass_posterior_figure",
    "save_spectrum_figure",
    "save_threshold_figure",
    "save_gv_figure",
]

_FIGSIZE = (7.0, 4.2)
_DPI = 130


def _new_axes(xlabel: str, ylabel: str, title: str):
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return fig, ax


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_spectrum_figure(path, spectrum, signal_mass=None):
    fig, ax = _new_axes("mass [GeV]", "events / bin", "Simulated spectrum")
    ax.stairs(spectrum.counts, spectrum.edges, color="#30507c", fill=True, alpha=0.65)
    if signal_mass is not None:
        ax.axvline(signal_mass, color="#c23b22", ls="--", lw=1.2, label=f"injected {signal_mass} GeV")
        ax.legend(frameon=False)
    return _finish(fig, path)


def save_mass_posterior_figure(path, grid, density, map_mass=None, temperature_kdes=None):
    """Final mass posterior KDE, optionally over the tempering history."""
    fig, ax = _new_axes("mass [GeV]", "posterior density", "Mass posterior")
    if temperature_kdes:
        n = len(temperature_kdes)
        for i, (g, d) in enumerate(temperature_kdes):
            shade = 0.82 - 0.72 * (i + 1) / n
            ax.plot(g, d, color=str(shade), lw=0.9)
    ax.plot(grid, density, color="#1a1a1a", lw=1.8, label="final posterior")
    if map_mass is not None:
        ax.axvline(map_mass, color="#c23b22", lw=1.2, ls="--", label=f"mode {map_mass:.2f} GeV")
    ax.legend(frameon=False)
    return _finish(fig, path)


def save_spectrum_fit_figure(path, spectrum, psi_mean, signal_curve=None):
    fig, ax = _new_axes("mass [GeV]", "events / bin", "Data and posterior background")
    ax.stairs(spectrum.counts, spectrum.edges, color="#9db4cf", fill=True, alpha=0.6, label="data")
    mid = spectrum.midpoints
    ax.plot(mid, np.exp(psi_mean), color="#c23b22", lw=1.5, label="posterior mean background")
    if signal_curve is not None:
        ax.plot(mid, np.exp(psi_mean) + signal_curve, color="#1a1a1a", lw=1.2, ls="--",
                label="background + signal at mode")
    ax.legend(frameon=False)
    return _finish(fig, path)


def save_joint_mu_figure(path, masses, mus, mode=None, box=None):
    fig, ax = _new_axes("mass [GeV]", "cross-section scale", "Joint mass / scale posterior")
    ax.scatter(masses, mus, s=4, alpha=0.25, color="#30507c", linewidths=0)
    if box is not None:
        (m_lo, m_hi), (u_lo, u_hi) = box
        ax.add_patch(
            plt.Rectangle(
                (m_lo, u_lo), m_hi - m_lo, u_hi - u_lo,
                fill=False, color="#1a1a1a", lw=1.3, label="top 68% box",
            )
        )
    if mode is not None:
        ax.plot([mode[0]], [mode[1]], marker="x", ms=10, color="#c23b22", label="joint mode")
    ax.legend(frameon=False)
    return _finish(fig, path)


def save_threshold_figure(path, fine_grid, fine_thresholds, coarse_grid=None, coarse_thresholds=None):
    fig, ax = _new_axes("mass [GeV]", "density threshold", "Exclusion thresholds")
    ax.plot(fine_grid, fine_thresholds, color="#30507c", lw=1.6, label="smoothed threshold")
    if coarse_grid is not None:
        ax.plot(coarse_grid, coarse_thresholds, "o", ms=5, color="#c23b22", label="coarse estimates")
    ax.legend(frameon=False)
    return _finish(fig, path)


def save_decision_figure(path, grid, density, thresholds, intervals, credible=None, includes_absent=None):
    fig, ax = _new_axes("mass [GeV]", "posterior density", "Decision set")
    ax.plot(grid, density, color="#1a1a1a", lw=1.6, label="posterior density")
    ax.plot(grid, thresholds, color="#30507c", lw=1.3, label="threshold q(m)")
    for i, (lo, hi) in enumerate(intervals):
        ax.axvspan(lo, hi, color="#c2d5c0", alpha=0.6, label="decision interval" if i == 0 else None)
    if credible is not None:
        for i, edge in enumerate(credible):
            ax.axvline(edge, color="#c23b22", ls="--", lw=1.1,
                       label="95% credible bounds" if i == 0 else None)
    if includes_absent is not None:
        ax.set_title(f"Decision set (no-signal retained: {includes_absent})")
    ax.legend(frameon=False)
    return _finish(fig, path)


def save_gv_figure(path, grid, example_scan, level):
    fig, ax = _new_axes("scan coordinate", "local statistic", "Null scan and observed level")
    ax.plot(grid, example_scan, color="#30507c", lw=1.2, label="one null scan")
    ax.axhline(level, color="#c23b22", ls="--", lw=1.2, label="observed maximum")
    ax.legend(frameon=False)
    return _finish(fig, path)
