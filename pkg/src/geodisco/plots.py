"""Figure rendering for report outputs.

Headless (Agg) matplotlib helpers used by the CLI report paths. Figures are
written without timestamps so that reruns are byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_spectrum", "plot_loss_trace"]

# strip creation-date metadata so reruns produce identical bytes
_SAVE_KW = {"dpi": 120, "metadata": {"Date": None}}


def plot_spectrum(eigenvalues, gaps, coarse_count, fine_count, path) -> None:
    """Eigenvalue scatter plus gap bars with the selected counts marked."""
    eig = np.asarray(eigenvalues)
    gap = np.asarray(gaps)
    shown = min(eig.size, 60)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(np.arange(1, shown + 1), eig[:shown], "o", ms=4)
    ax1.set_ylabel("eigenvalue")
    ax1.set_title("normalized Laplacian spectrum")
    ax2.bar(np.arange(1, min(gap.size, shown - 1) + 1), gap[: min(gap.size, shown - 1)], width=0.7)
    ax2.axvline(coarse_count, color="C3", ls="--", lw=1, label=f"coarse = {coarse_count}")
    if fine_count != coarse_count:
        ax2.axvline(fine_count, color="C2", ls=":", lw=1, label=f"fine = {fine_count}")
    ax2.set_xlabel("index (eigenvalues below gap)")
    ax2.set_ylabel("gap")
    ax2.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_loss_trace(trace, path) -> None:
    """Training objective per iteration, with a running-mean overlay."""
    y = np.asarray(trace, dtype=float)
    x = np.arange(1, y.size + 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(x, y, lw=0.6, alpha=0.5, label="per-iteration")
    if y.size >= 20:
        w = max(5, y.size // 50)
        kernel = np.ones(w) / w
        smooth = np.convolve(y, kernel, mode="valid")
        ax.plot(x[w - 1 :], smooth, lw=1.5, label=f"running mean (w={w})")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.set_title("training loss")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
