"""Static line-plot rendering for the report path.

Figures are written next to the delimited output files; they are a reading
aid, the CSV/JSON files remain the authoritative record.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_spectrum(rows: np.ndarray, path: str) -> None:
    """Output variance spectrum: var_X(w), var_Y(w) with the vacuum level."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(rows[:, 0], rows[:, 1], label="var X out")
    ax.plot(rows[:, 0], rows[:, 2], label="var Y out")
    ax.axhline(0.25, color="grey", lw=0.8, ls="--", label="vacuum 1/4")
    ax.set_xlabel("sideband frequency (g)")
    ax.set_ylabel("quadrature variance")
    ax.set_yscale("log")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_compare(taus, infidelities, var_squeezed, omega_abs, path: str) -> None:
    """Infidelity and squeezed variance vs interaction time."""
    taus = np.asarray(taus, dtype=float)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.4))
    positive = np.asarray(infidelities) > 0
    ax1.plot(taus, infidelities, marker="o", ms=3)
    if positive.any():
        ax1.set_yscale("log")
    ax1.set_xlabel("interaction time (1/g)")
    ax1.set_ylabel("1 - fidelity")

    ax2.plot(taus, var_squeezed, marker="o", ms=3, label="simulated")
    if omega_abs > 0:
        analytic = np.exp(-2 * omega_abs * taus) / 4
        ax2.plot(taus, analytic, lw=0.9, ls="--", label="exp(-2|xi|)/4")
    ax2.axhline(0.25, color="grey", lw=0.8, ls=":")
    ax2.set_xlabel("interaction time (1/g)")
    ax2.set_ylabel("squeezed variance")
    ax2.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_effective(taus, xi_abs, path: str) -> None:
    """Accumulated squeeze parameter vs interaction time."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(taus, xi_abs, marker="o", ms=3)
    ax.set_xlabel("interaction time (1/g)")
    ax.set_ylabel("|xi|")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(axis_name: str, values, metrics: dict[str, list[float]],
               path: str, max_lines: int = 6) -> None:
    """1D sweep summary: each finite numeric metric against the axis."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    drawn = 0
    for name, series in metrics.items():
        arr = np.asarray(series, dtype=float)
        if not np.all(np.isfinite(arr)):
            continue
        ax.plot(values, arr, marker="o", ms=3, label=name)
        drawn += 1
        if drawn >= max_lines:
            break
    ax.set_xlabel(axis_name)
    ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
