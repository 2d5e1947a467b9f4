"""Delimited output and figure rendering for the command-line tools.

Every report is written as plot-ready CSV with 12-significant-digit floats;
the matching figures are rendered to PNG next to the data files unless the
caller disables them.  All writers are deterministic: fixed column orders,
fixed float formatting, no timestamps.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "write_csv",
    "write_spectrum_csv",
    "write_trajectory_csv",
    "write_density_csv",
    "render_density_figure",
    "render_transmission_figure",
    "render_rabi_figure",
    "render_memory_figure",
    "render_detuning_scan_figure",
]

_FMT = "%.12g"


def write_csv(path, header, columns):
    columns = [np.asarray(c) for c in columns]
    rows = len(columns[0])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            fh.write(",".join(_FMT % c[i] for c in columns) + "\n")


def write_spectrum_csv(path, spectrum):
    write_csv(path, ["omega", "re_t", "im_t", "abs_t_squared"],
              [spectrum.frequencies, spectrum.amplitudes.real,
               spectrum.amplitudes.imag, spectrum.power])


def write_trajectory_csv(path, times, overlap):
    write_csv(path, ["t", "re_f", "im_f", "fidelity"],
              [times, np.real(overlap), np.imag(overlap), np.abs(overlap) ** 2])


def write_density_csv(path, grid, density):
    write_csv(path, ["omega", "density"], [grid, density])


def _new_axes(title, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def render_density_figure(path, curves):
    """``curves``: list of (label, grid, density)."""
    fig, ax = _new_axes("Spectral distributions", "frequency (width units)", "density")
    for label, grid, density in curves:
        ax.plot(grid, density, label=label, lw=1.2)
    ax.legend()
    _save(fig, path)


def render_transmission_figure(path, panels):
    """``panels``: list of (label, spectrum)."""
    fig, axes = plt.subplots(1, len(panels), figsize=(5.0 * len(panels), 4.0), dpi=120)
    if len(panels) == 1:
        axes = [axes]
    for ax, (label, spectrum) in zip(axes, panels):
        ax.plot(spectrum.frequencies, spectrum.power, lw=0.9)
        ax.set_title(label)
        ax.set_xlabel("probe frequency (width units)")
        ax.set_ylabel("|t|^2")
    _save(fig, path)


def render_rabi_figure(path, curves):
    """``curves``: list of (label, times, fidelity)."""
    fig, ax = _new_axes("Collective Rabi oscillation", "time (inverse width)", "F(t)")
    for label, times, fidelity in curves:
        ax.plot(times, fidelity, label=label, lw=0.9)
    ax.legend()
    _save(fig, path)


def render_memory_figure(path, curves, target_time=None):
    fig, ax = _new_axes("Storage fidelity", "time (inverse width)", "F(t)")
    for label, times, fidelity in curves:
        ax.semilogy(times, np.maximum(fidelity, 1e-16), label=label, lw=1.1)
    if target_time is not None:
        ax.axvline(target_time, color="gray", lw=0.8, ls="--")
    ax.legend()
    _save(fig, path)


def render_detuning_scan_figure(path, scans, target_time):
    """``scans``: list of (label, deltas, fidelities at the target time)."""
    fig, ax = _new_axes(f"Fidelity at t = {target_time:g} vs detuning",
                        "cavity detuning (width units)", "F")
    for label, deltas, values in scans:
        ax.semilogy(deltas, np.maximum(values, 1e-16), label=label, lw=1.1)
    ax.legend()
    _save(fig, path)
