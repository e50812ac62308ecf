"""Figures for CLI reports, rendered off-screen to image files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_image(img, path, title=None):
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(np.asarray(img), cmap="gray", interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_psnr_curves(medians, path):
    """``medians``: ``{(ratio, scale): psnr}``; one curve per illumination scale."""
    scales = sorted({s for _, s in medians}, reverse=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for scale in scales:
        ratios = sorted(r for r, s in medians if s == scale)
        ax.plot(ratios, [medians[(r, scale)] for r in ratios], marker="o",
                label=f"illumination x{scale:g}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("undersampling ratio N/M")
    ax.set_ylabel("PSNR (dB)")
    ax.legend()
    _save(fig, path)


def plot_variance_maps(empirical, theory, path):
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    rel = (empirical - theory) / theory
    for ax, data, title in zip(axes, (empirical, theory, rel),
                               ("empirical variance", "predicted variance", "relative error")):
        im = ax.imshow(data, interpolation="nearest")
        fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_title(title)
        ax.set_axis_off()
    _save(fig, path)


def plot_spectra(lambda_axis, spectra, path, labels=None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for i, s in enumerate(spectra):
        ax.plot(lambda_axis, s, label=None if labels is None else labels[i])
    ax.set_xlabel("wavelength (nm)")
    ax.set_ylabel("normalized intensity")
    if labels is not None:
        ax.legend(fontsize="small")
    _save(fig, path)


def plot_trace(trace, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(np.arange(1, len(trace) + 1), np.asarray(trace) - np.min(trace) + 1e-12)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective - final")
    _save(fig, path)
