"""Figures written next to the CLI's CSV output (non-interactive backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .attenuation import MagnitudeBounds, mode_t60  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_modes(dec, path, fs: float | None = None, bounds: MagnitudeBounds | None = None):
    """Decay (T60 with ``fs``, else ``|lambda|``) and residue magnitude against frequency."""
    upper = dec.poles.imag >= 0
    lam, rho = dec.poles[upper], dec.residues[upper]
    w = np.angle(lam)
    freq = w * fs / (2 * np.pi) if fs else w
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    if fs:
        ax1.plot(freq, mode_t60(lam, fs), ".", ms=2, label="modes")
        ax1.set_ylabel("T60 [s]")
    else:
        ax1.plot(freq, np.abs(lam), ".", ms=2, label="modes")
        ax1.set_ylabel("|λ|")
    if bounds is not None:
        theta = np.linspace(0, np.pi, 512)
        lo, hi = bounds.on_unit_circle(theta)
        x = theta * fs / (2 * np.pi) if fs else theta
        if fs:
            lo, hi = mode_t60(lo, fs), mode_t60(hi, fs)
        ax1.plot(x, lo, "k--", lw=1, label="bounds")
        ax1.plot(x, hi, "k--", lw=1)
    ax1.legend(loc="best")
    with np.errstate(divide="ignore"):
        ax2.plot(freq, 20 * np.log10(np.abs(rho)), ".", ms=2)
    ax2.set_ylabel("|ρ| [dB]")
    ax2.set_xlabel("frequency [Hz]" if fs else "angle [rad]")
    return _save(fig, path)


def plot_impulse_responses(reference, modal, path):
    """Recursion output, modal resynthesis and their difference."""
    n = np.arange(len(reference))
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    ax1.plot(n, np.real(reference), lw=0.7, label="recursion")
    ax1.plot(n, np.real(modal), lw=0.7, ls="--", label="modal")
    ax1.legend(loc="upper right")
    ax1.set_ylabel("h(n)")
    ax2.semilogy(n, np.abs(np.asarray(reference) - np.asarray(modal)) + 1e-300, lw=0.7)
    ax2.set_ylabel("|error|")
    ax2.set_xlabel("sample")
    return _save(fig, path)


def plot_cluster_table(names, probabilities, path):
    """Grouped bars of cluster-number probabilities per ensemble."""
    probabilities = np.asarray(probabilities)
    kappa = np.arange(probabilities.shape[1])
    width = 0.8 / len(names)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, (name, p) in enumerate(zip(names, probabilities)):
        ax.bar(kappa + i * width, p, width, label=name)
    ax.set_xticks(kappa + 0.4 - width / 2, ["0", "1", "2", "3", "≥4"][:kappa.size])
    ax.set_xlabel("cluster number")
    ax.set_ylabel("probability")
    ax.legend()
    return _save(fig, path)


def plot_residue_histogram(hist, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.stairs(hist.probabilities, hist.edges, fill=True)
    ax.set_xlabel(f"{hist.kind.value} magnitude [dB]")
    ax.set_ylabel("probability")
    return _save(fig, path)


def plot_bench(rows, path):
    """Log-log wall time against order, one line per method; rows are ``(order, method, seconds, ...)``."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in sorted({r[1] for r in rows}):
        pts = sorted((r[0], r[2]) for r in rows if r[1] == method)
        ax.loglog(*zip(*pts), "o-", label=method)
    ax.set_xlabel("order")
    ax.set_ylabel("seconds")
    ax.legend()
    return _save(fig, path)


def plot_bounds(report, path):
    """Pole magnitudes against angle with the per-pole bounds."""
    order = np.argsort(np.angle(report.poles))
    w = np.angle(report.poles)[order]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(w, np.abs(report.poles)[order], ".", ms=2, label="|λ|")
    ax.plot(w, report.lower[order], "k--", lw=1, label="bounds")
    ax.plot(w, report.upper[order], "k--", lw=1)
    ax.set_xlabel("angle [rad]")
    ax.legend()
    return _save(fig, path)
